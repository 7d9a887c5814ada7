//! Dense row-major `f64` tensors for the plaintext reference runtime.
//!
//! Broadcasting is limited to scalar-vs-tensor; axis reductions keep the
//! input shape by replicating the reduced value along the axis, so that
//! downstream elementwise combines never need general broadcasting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Tensor { shape, data }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn full(shape: Vec<usize>, v: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape, data: vec![v; n] }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// Elementwise combine with scalar-vs-tensor broadcast.
    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            Ok(Tensor { shape: self.shape.clone(), data })
        } else if other.is_scalar() {
            let b = other.data[0];
            Ok(self.map(|a| f(a, b)))
        } else if self.is_scalar() {
            let a = self.data[0];
            Ok(Tensor { shape: other.shape.clone(), data: other.data.iter().map(|&b| f(a, b)).collect() })
        } else {
            Err(Error::Eval(format!(
                "shape mismatch {:?} vs {:?} (only scalar broadcast supported)",
                self.shape, other.shape
            )))
        }
    }

    /// Strides of a row-major layout.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.shape[i + 1];
        }
        s
    }

    /// Iterate groups along `axis`: yields (group index list boundaries) via
    /// callback over (outer, inner) so that element index = outer * axis_len
    /// * inner_stride + k * inner_stride + inner.
    fn axis_dims(&self, axis: usize) -> (usize, usize, usize) {
        let axis_len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        (outer, axis_len, inner)
    }

    /// Reduce along `axis` with `f`, replicating the result along the axis so
    /// the output shape equals the input shape.
    pub fn reduce_axis_keep(&self, axis: usize, init: f64, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::Eval(format!("axis {axis} out of range for shape {:?}", self.shape)));
        }
        let (outer, k, inner) = self.axis_dims(axis);
        let mut out = vec![0.0; self.data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = init;
                for j in 0..k {
                    acc = f(acc, self.data[(o * k + j) * inner + i]);
                }
                for j in 0..k {
                    out[(o * k + j) * inner + i] = acc;
                }
            }
        }
        Ok(Tensor { shape: self.shape.clone(), data: out })
    }

    pub fn reduce_all(&self, init: f64, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor::scalar(self.data.iter().fold(init, |a, &b| f(a, b)))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let ([a, b], [b2, c]) = (two_dims(self)?, two_dims(other)?);
        if b != b2 {
            return Err(Error::Eval(format!("matmul inner dims {b} != {b2}")));
        }
        let mut out = vec![0.0; a * c];
        for i in 0..a {
            for kk in 0..b {
                let x = self.data[i * b + kk];
                for j in 0..c {
                    out[i * c + j] += x * other.data[kk * c + j];
                }
            }
        }
        Ok(Tensor { shape: vec![a, c], data: out })
    }

    /// Stride-1, no-padding, single-group convolution:
    /// `[n, cin, h, w] * [cout, cin, kh, kw] -> [n, cout, h-kh+1, w-kw+1]`.
    pub fn conv2d(&self, weight: &Tensor) -> Result<Tensor> {
        let (n, cin, h, w) = four_dims(self)?;
        let (cout, cin2, kh, kw) = four_dims(weight)?;
        if cin != cin2 {
            return Err(Error::Eval(format!("conv2d channel mismatch {cin} != {cin2}")));
        }
        if kh > h || kw > w {
            return Err(Error::Eval("conv2d kernel larger than input".into()));
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let mut out = vec![0.0; n * cout * oh * ow];
        for b in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let xv = self.data[((b * cin + ci) * h + oy + ky) * w + ox + kx];
                                    let wv = weight.data[((co * cin + ci) * kh + ky) * kw + kx];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out[((b * cout + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        Ok(Tensor { shape: vec![n, cout, oh, ow], data: out })
    }

    /// Non-overlapping pooling (stride equals window) on `[n, c, h, w]`.
    pub fn pool2d(&self, kh: usize, kw: usize, init: f64, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (n, c, h, w) = four_dims(self)?;
        if h % kh != 0 || w % kw != 0 {
            return Err(Error::Eval(format!("pool window ({kh},{kw}) does not divide ({h},{w})")));
        }
        let (oh, ow) = (h / kh, w / kw);
        let mut out = vec![0.0; n * c * oh * ow];
        for b in 0..n {
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = init;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                acc = f(acc, self.data[((b * c + ch) * h + oy * kh + ky) * w + ox * kw + kx]);
                            }
                        }
                        out[((b * c + ch) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        Ok(Tensor { shape: vec![n, c, oh, ow], data: out })
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Eval(format!("reshape {:?} -> {:?} changes element count", self.shape, shape)));
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    pub fn transpose2(&self) -> Result<Tensor> {
        let [a, b] = two_dims(self)?;
        let mut out = vec![0.0; a * b];
        for i in 0..a {
            for j in 0..b {
                out[j * a + i] = self.data[i * b + j];
            }
        }
        Ok(Tensor { shape: vec![b, a], data: out })
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        if perm.len() != self.rank() {
            return Err(Error::Eval("permute rank mismatch".into()));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::Eval(format!("invalid permutation {perm:?}")));
            }
            seen[p] = true;
        }
        let old_strides = self.strides();
        let new_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let out_t = Tensor::zeros(new_shape.clone());
        let new_strides = out_t.strides();
        let mut out = out_t.data;
        let mut idx = vec![0usize; self.rank()];
        for flat in 0..self.data.len() {
            let mut rem = flat;
            for (d, s) in old_strides.iter().enumerate() {
                idx[d] = rem / s;
                rem %= s;
            }
            let mut dst = 0;
            for (d, &p) in perm.iter().enumerate() {
                dst += idx[p] * new_strides[d];
            }
            out[dst] = self.data[flat];
        }
        Ok(Tensor { shape: new_shape, data: out })
    }

    pub fn stack(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::Eval("stack of zero tensors".into()))?;
        for p in parts {
            if p.shape != first.shape {
                return Err(Error::Eval("stack shape mismatch".into()));
            }
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(parts.len() * first.len());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { shape, data })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn two_dims(t: &Tensor) -> Result<[usize; 2]> {
    match t.shape.as_slice() {
        [a, b] => Ok([*a, *b]),
        _ => Err(Error::Eval(format!("expected 2-d tensor, got shape {:?}", t.shape))),
    }
}

fn four_dims(t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match t.shape.as_slice() {
        [n, c, h, w] => Ok((*n, *c, *h, *w)),
        _ => Err(Error::Eval(format!("expected 4-d tensor, got shape {:?}", t.shape))),
    }
}
