//! Dense tensor values and the raw numeric kernels built on them.
//!
//! Tensors are rank 1..=4, row-major, `f64` throughout. Image-like tensors use
//! the layout (height, width, channels); convolution kernels use
//! (kh, kw, in_channels, filters). All kernels are pure: they allocate and
//! return a fresh tensor.

use thiserror::Error;

/// Structured dimension error naming the offending axis.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("{op}: {axis} mismatch: expected {expected}, got {got}")]
    AxisMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: expected rank {expected}, got {got}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: {axis} extent {got} must be even")]
    OddExtent {
        op: &'static str,
        axis: &'static str,
        got: usize,
    },
    #[error("{op}: {axis} extent {got} must be odd")]
    EvenExtent {
        op: &'static str,
        axis: &'static str,
        got: usize,
    },
    #[error("{op}: output {axis} extent would be empty ({detail})")]
    EmptyOutput {
        op: &'static str,
        axis: &'static str,
        detail: String,
    },
    #[error("tensor data length {got} does not match shape product {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("tensor rank {got} out of supported range 1..=4")]
    UnsupportedRank { got: usize },
}

/// Dense row-major tensor of 64-bit reals, rank 1..=4.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor, ShapeError> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(ShapeError::UnsupportedRank { got: shape.len() });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ShapeError::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
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

    /// Reinterpret the same data under a new shape of equal volume.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor, ShapeError> {
        Tensor::from_vec(shape.to_vec(), self.data.clone())
    }

    /// Value at (row, col, channel) of a rank-3 tensor.
    #[inline]
    pub fn at3(&self, i: usize, j: usize, c: usize) -> f64 {
        debug_assert_eq!(self.rank(), 3);
        let (w, ch) = (self.shape[1], self.shape[2]);
        self.data[(i * w + j) * ch + c]
    }

    #[inline]
    pub fn set3(&mut self, i: usize, j: usize, c: usize, v: f64) {
        debug_assert_eq!(self.rank(), 3);
        let (w, ch) = (self.shape[1], self.shape[2]);
        self.data[(i * w + j) * ch + c] = v;
    }

    /// Value at (row, col) of a rank-2 tensor.
    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the largest element; ties break toward the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        let mut best_v = self.data[0];
        for (i, &v) in self.data.iter().enumerate().skip(1) {
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        best
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise `self += other * scale`.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b * scale;
        }
    }

    pub fn scale_inplace(&mut self, k: f64) {
        for v in self.data.iter_mut() {
            *v *= k;
        }
    }
}

/// Zero-padding mode for `conv2d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

fn require_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<(), ShapeError> {
    if t.rank() != rank {
        return Err(ShapeError::RankMismatch {
            op,
            expected: rank,
            got: t.rank(),
        });
    }
    Ok(())
}

/// 2-D convolution (cross-correlation) over an (h, w, c) input with
/// (kh, kw, c, f) kernels and an (f,) bias. Out-of-bounds taps read zero.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    padding: Padding,
) -> Result<Tensor, ShapeError> {
    require_rank("conv2d", input, 3)?;
    require_rank("conv2d", kernels, 4)?;
    require_rank("conv2d", bias, 1)?;
    let (h, w, c) = (input.shape[0], input.shape[1], input.shape[2]);
    let (kh, kw, kc, f) = (
        kernels.shape[0],
        kernels.shape[1],
        kernels.shape[2],
        kernels.shape[3],
    );
    if kh % 2 == 0 {
        return Err(ShapeError::EvenExtent {
            op: "conv2d",
            axis: "kernel height",
            got: kh,
        });
    }
    if kw % 2 == 0 {
        return Err(ShapeError::EvenExtent {
            op: "conv2d",
            axis: "kernel width",
            got: kw,
        });
    }
    if kc != c {
        return Err(ShapeError::AxisMismatch {
            op: "conv2d",
            axis: "input channels",
            expected: c,
            got: kc,
        });
    }
    if bias.shape[0] != f {
        return Err(ShapeError::AxisMismatch {
            op: "conv2d",
            axis: "bias length",
            expected: f,
            got: bias.shape[0],
        });
    }
    let (oh, ow, ph, pw) = match padding {
        Padding::Same => (h, w, kh / 2, kw / 2),
        Padding::Valid => {
            if h < kh {
                return Err(ShapeError::EmptyOutput {
                    op: "conv2d",
                    axis: "height",
                    detail: format!("input height {h} < kernel height {kh}"),
                });
            }
            if w < kw {
                return Err(ShapeError::EmptyOutput {
                    op: "conv2d",
                    axis: "width",
                    detail: format!("input width {w} < kernel width {kw}"),
                });
            }
            (h - kh + 1, w - kw + 1, 0, 0)
        }
    };

    let mut out = vec![0.0f64; oh * ow * f];
    let kdat = kernels.data();
    let idat = input.data();
    let bdat = bias.data();
    for oi in 0..oh {
        // Valid tap rows for this output row (zero padding contributes nothing).
        let di_lo = ph.saturating_sub(oi);
        let di_hi = (h + ph - oi).min(kh);
        for oj in 0..ow {
            let dj_lo = pw.saturating_sub(oj);
            let dj_hi = (w + pw - oj).min(kw);
            let acc = &mut out[(oi * ow + oj) * f..(oi * ow + oj) * f + f];
            acc.copy_from_slice(bdat);
            for di in di_lo..di_hi {
                let iy = oi + di - ph;
                for dj in dj_lo..dj_hi {
                    let ix = oj + dj - pw;
                    let ipix = &idat[(iy * w + ix) * c..(iy * w + ix) * c + c];
                    let kbase = (di * kw + dj) * c * f;
                    for (ci, &xv) in ipix.iter().enumerate() {
                        let krow = &kdat[kbase + ci * f..kbase + ci * f + f];
                        for (a, &kv) in acc.iter_mut().zip(krow.iter()) {
                            *a += xv * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(vec![oh, ow, f], out)
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and, per output
/// element, the flat row-major input index of the selected maximum (ties go to
/// the lowest index).
pub fn maxpool2x2(input: &Tensor) -> Result<(Tensor, Vec<usize>), ShapeError> {
    require_rank("maxpool2x2", input, 3)?;
    let (h, w, c) = (input.shape[0], input.shape[1], input.shape[2]);
    if h % 2 != 0 {
        return Err(ShapeError::OddExtent {
            op: "maxpool2x2",
            axis: "height",
            got: h,
        });
    }
    if w % 2 != 0 {
        return Err(ShapeError::OddExtent {
            op: "maxpool2x2",
            axis: "width",
            got: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f64; oh * ow * c];
    let mut argmax = vec![0usize; oh * ow * c];
    let idat = input.data();
    for oi in 0..oh {
        for oj in 0..ow {
            for ci in 0..c {
                let mut best_idx = ((2 * oi) * w + 2 * oj) * c + ci;
                let mut best = idat[best_idx];
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * oi + di) * w + 2 * oj + dj) * c + ci;
                    if idat[idx] > best {
                        best = idat[idx];
                        best_idx = idx;
                    }
                }
                out[(oi * ow + oj) * c + ci] = best;
                argmax[(oi * ow + oj) * c + ci] = best_idx;
            }
        }
    }
    Ok((Tensor::from_vec(vec![oh, ow, c], out)?, argmax))
}

/// Nearest-neighbor 2x upsampling: each input pixel fills a 2x2 output block.
pub fn upsample2x(input: &Tensor) -> Result<Tensor, ShapeError> {
    require_rank("upsample2x", input, 3)?;
    let (h, w, c) = (input.shape[0], input.shape[1], input.shape[2]);
    let mut out = vec![0.0f64; 4 * h * w * c];
    let idat = input.data();
    for i in 0..h {
        for j in 0..w {
            let src = &idat[(i * w + j) * c..(i * w + j) * c + c];
            for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let dst = ((2 * i + di) * 2 * w + 2 * j + dj) * c;
                out[dst..dst + c].copy_from_slice(src);
            }
        }
    }
    Tensor::from_vec(vec![2 * h, 2 * w, c], out)
}

/// Channel concatenation: `a` occupies the leading channels, `b` the trailing.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor, ShapeError> {
    require_rank("concat_channels", a, 3)?;
    require_rank("concat_channels", b, 3)?;
    if a.shape[0] != b.shape[0] {
        return Err(ShapeError::AxisMismatch {
            op: "concat_channels",
            axis: "height",
            expected: a.shape[0],
            got: b.shape[0],
        });
    }
    if a.shape[1] != b.shape[1] {
        return Err(ShapeError::AxisMismatch {
            op: "concat_channels",
            axis: "width",
            expected: a.shape[1],
            got: b.shape[1],
        });
    }
    let (h, w) = (a.shape[0], a.shape[1]);
    let (ca, cb) = (a.shape[2], b.shape[2]);
    let mut out = vec![0.0f64; h * w * (ca + cb)];
    let (adat, bdat) = (a.data(), b.data());
    for p in 0..h * w {
        out[p * (ca + cb)..p * (ca + cb) + ca].copy_from_slice(&adat[p * ca..p * ca + ca]);
        out[p * (ca + cb) + ca..(p + 1) * (ca + cb)].copy_from_slice(&bdat[p * cb..p * cb + cb]);
    }
    Tensor::from_vec(vec![h, w, ca + cb], out)
}

/// Channel slice `[c0, c1)` of a rank-3 tensor; inverse of `concat_channels`.
pub fn slice_channels(t: &Tensor, c0: usize, c1: usize) -> Result<Tensor, ShapeError> {
    require_rank("slice_channels", t, 3)?;
    let (h, w, c) = (t.shape[0], t.shape[1], t.shape[2]);
    if c1 > c || c0 >= c1 {
        return Err(ShapeError::AxisMismatch {
            op: "slice_channels",
            axis: "channel range",
            expected: c,
            got: c1,
        });
    }
    let cs = c1 - c0;
    let mut out = vec![0.0f64; h * w * cs];
    for p in 0..h * w {
        out[p * cs..(p + 1) * cs].copy_from_slice(&t.data()[p * c + c0..p * c + c1]);
    }
    Tensor::from_vec(vec![h, w, cs], out)
}

/// Fully connected layer: (n,) input, (n, m) weights, (m,) bias.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, ShapeError> {
    require_rank("dense", input, 1)?;
    require_rank("dense", weights, 2)?;
    require_rank("dense", bias, 1)?;
    let (n, m) = (weights.shape[0], weights.shape[1]);
    if input.shape[0] != n {
        return Err(ShapeError::AxisMismatch {
            op: "dense",
            axis: "input length",
            expected: n,
            got: input.shape[0],
        });
    }
    if bias.shape[0] != m {
        return Err(ShapeError::AxisMismatch {
            op: "dense",
            axis: "bias length",
            expected: m,
            got: bias.shape[0],
        });
    }
    let mut out = bias.data().to_vec();
    let wdat = weights.data();
    for (i, &xv) in input.data().iter().enumerate() {
        let wrow = &wdat[i * m..i * m + m];
        for (o, &wv) in out.iter_mut().zip(wrow.iter()) {
            *o += xv * wv;
        }
    }
    Tensor::from_vec(vec![m], out)
}

pub fn relu(t: &Tensor) -> Tensor {
    t.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn sigmoid(t: &Tensor) -> Tensor {
    t.map(sigmoid_scalar)
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softmax (max-subtraction) over a rank-1 tensor.
pub fn softmax(t: &Tensor) -> Result<Tensor, ShapeError> {
    require_rank("softmax", t, 1)?;
    let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = t.data().iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Tensor::from_vec(vec![t.shape[0]], exps.into_iter().map(|e| e / sum).collect())
}

/// Row-major flattening to rank 1.
pub fn flatten(t: &Tensor) -> Tensor {
    Tensor {
        shape: vec![t.len()],
        data: t.data.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t3(h: usize, w: usize, c: usize, data: Vec<f64>) -> Tensor {
        Tensor::from_vec(vec![h, w, c], data).unwrap()
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let input = t3(3, 3, 1, (1..=9).map(|v| v as f64).collect());
        let k = Tensor::from_vec(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let out = conv2d(&input, &k, &b, Padding::Same).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn zero_input_yields_bias() {
        let input = Tensor::zeros(&[4, 4, 2]);
        let k = Tensor::zeros(&[3, 3, 2, 3]);
        let b = Tensor::from_vec(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let out = conv2d(&input, &k, &b, Padding::Same).unwrap();
        for p in 0..16 {
            assert_eq!(&out.data()[p * 3..p * 3 + 3], &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn conv2d_rejects_even_kernel_and_channel_mismatch() {
        let input = Tensor::zeros(&[4, 4, 2]);
        let even = Tensor::zeros(&[2, 3, 2, 1]);
        let b = Tensor::zeros(&[1]);
        assert!(matches!(
            conv2d(&input, &even, &b, Padding::Same),
            Err(ShapeError::EvenExtent { axis: "kernel height", .. })
        ));
        let wrong_c = Tensor::zeros(&[3, 3, 4, 1]);
        assert!(matches!(
            conv2d(&input, &wrong_c, &b, Padding::Same),
            Err(ShapeError::AxisMismatch { axis: "input channels", .. })
        ));
    }

    #[test]
    fn maxpool_constant_and_small() {
        let input = Tensor::filled(&[4, 4, 2], 7.5);
        let (out, _) = maxpool2x2(&input).unwrap();
        assert_eq!(out, Tensor::filled(&[2, 2, 2], 7.5));

        let input = t3(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let (out, arg) = maxpool2x2(&input).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn maxpool_tie_breaks_to_lowest_index() {
        let input = t3(2, 2, 1, vec![5.0, 5.0, 5.0, 5.0]);
        let (_, arg) = maxpool2x2(&input).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn maxpool_rejects_odd_extent() {
        let input = Tensor::zeros(&[3, 4, 1]);
        assert!(matches!(
            maxpool2x2(&input),
            Err(ShapeError::OddExtent { axis: "height", .. })
        ));
    }

    #[test]
    fn upsample_single_pixel() {
        let input = t3(1, 1, 2, vec![3.0, -1.0]);
        let out = upsample2x(&input).unwrap();
        assert_eq!(out.shape(), &[2, 2, 2]);
        for p in 0..4 {
            assert_eq!(&out.data()[p * 2..p * 2 + 2], &[3.0, -1.0]);
        }
    }

    #[test]
    fn upsample_shape_rule() {
        let input = Tensor::zeros(&[4, 4, 64]);
        assert_eq!(upsample2x(&input).unwrap().shape(), &[8, 8, 64]);
    }

    #[test]
    fn concat_places_and_slices_back() {
        let a = Tensor::zeros(&[2, 2, 1]);
        let b = Tensor::filled(&[2, 2, 1], 1.0);
        let cat = concat_channels(&a, &b).unwrap();
        assert_eq!(cat.shape(), &[2, 2, 2]);
        for p in 0..4 {
            assert_eq!(cat.data()[p * 2], 0.0);
            assert_eq!(cat.data()[p * 2 + 1], 1.0);
        }
        assert_eq!(slice_channels(&cat, 0, 1).unwrap(), a);
        assert_eq!(slice_channels(&cat, 1, 2).unwrap(), b);
    }

    #[test]
    fn concat_shape_rule_and_mismatch() {
        let a = Tensor::zeros(&[8, 8, 64]);
        let b = Tensor::zeros(&[8, 8, 64]);
        assert_eq!(concat_channels(&a, &b).unwrap().shape(), &[8, 8, 128]);
        let c = Tensor::zeros(&[4, 8, 64]);
        assert!(concat_channels(&a, &c).is_err());
    }

    #[test]
    fn softmax_symmetry_and_sigmoid_midpoint() {
        let s = softmax(&Tensor::from_vec(vec![2], vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        assert_eq!(sigmoid_scalar(0.0), 0.5);
    }

    #[test]
    fn dense_shape_errors() {
        let x = Tensor::zeros(&[6]);
        let w = Tensor::zeros(&[5, 4]);
        let b = Tensor::zeros(&[4]);
        assert!(matches!(
            dense(&x, &w, &b),
            Err(ShapeError::AxisMismatch { axis: "input length", .. })
        ));
    }
}
