//! Forward operations and their backward rules.
//!
//! Everything is rank-1/rank-2; higher ranks are not needed by the model and
//! keeping the set small keeps the backward rules auditable. No broadcasting
//! beyond `add_row_broadcast` (bias and per-branch embedding rows).

use super::{numel_of, Scalar, Tensor, TensorError};

/// C[m,p] = A[m,k] * B[k,p]
pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * p];
    for i in 0..m {
        let out_row = &mut out[i * p..(i + 1) * p];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == T::zero() {
                continue;
            }
            let b_row = &b[kk * p..(kk + 1) * p];
            for j in 0..p {
                out_row[j] = out_row[j] + aik * b_row[j];
            }
        }
    }
    out
}

/// C[m,k] = A[m,p] * B[k,p]^T
fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, p: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let a_row = &a[i * p..(i + 1) * p];
        for kk in 0..k {
            let b_row = &b[kk * p..(kk + 1) * p];
            let mut s = T::zero();
            for j in 0..p {
                s = s + a_row[j] * b_row[j];
            }
            out[i * k + kk] = s;
        }
    }
    out
}

/// C[k,p] = A[m,k]^T * B[m,p]
fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * p];
    for i in 0..m {
        let b_row = &b[i * p..(i + 1) * p];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == T::zero() {
                continue;
            }
            let out_row = &mut out[kk * p..(kk + 1) * p];
            for j in 0..p {
                out_row[j] = out_row[j] + aik * b_row[j];
            }
        }
    }
    out
}

fn dims2<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize), TensorError> {
    let shape = t.shape();
    match shape.len() {
        2 => Ok((shape[0], shape[1])),
        _ => Err(TensorError::Invalid {
            op,
            msg: format!("expected rank-2 tensor, got shape {:?}", shape),
        }),
    }
}

impl<T: Scalar> Tensor<T> {
    /// Standard matrix product. Backward: dA += dC·Bᵀ, dB += Aᵀ·dC.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let (m, k) = dims2(self, "matmul")?;
        let (k2, p) = dims2(other, "matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let data = self.with_data(|a| other.with_data(|b| matmul_raw(a, b, m, k, p)));
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            data,
            vec![m, p],
            vec![self.clone(), other.clone()],
            move |g| {
                if a.requires_grad() {
                    let da = b.with_data(|bd| matmul_nt(g, bd, m, p, k));
                    a.accum_grad(&da);
                }
                if b.requires_grad() {
                    let db = a.with_data(|ad| matmul_tn(ad, g, m, k, p));
                    b.accum_grad(&db);
                }
            },
        ))
    }

    pub fn transpose(&self) -> Result<Tensor<T>, TensorError> {
        let (m, n) = dims2(self, "transpose")?;
        let data = self.with_data(|d| {
            let mut out = vec![T::zero(); m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = d[i * n + j];
                }
            }
            out
        });
        let x = self.clone();
        Ok(Tensor::from_op(data, vec![n, m], vec![self.clone()], move |g| {
            let mut dx = vec![T::zero(); m * n];
            for j in 0..n {
                for i in 0..m {
                    dx[i * n + j] = g[j * m + i];
                }
            }
            x.accum_grad(&dx);
        }))
    }

    fn zip_elementwise(
        &self,
        other: &Tensor<T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Vec<T>, TensorError> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(self.with_data(|a| other.with_data(|b| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let data = self.zip_elementwise(other, "add", |x, y| x + y)?;
        let shape = self.shape();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            data,
            shape,
            vec![self.clone(), other.clone()],
            move |g| {
                a.accum_grad(g);
                b.accum_grad(g);
            },
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let data = self.zip_elementwise(other, "sub", |x, y| x - y)?;
        let shape = self.shape();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            data,
            shape,
            vec![self.clone(), other.clone()],
            move |g| {
                a.accum_grad(g);
                if b.requires_grad() {
                    let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                    b.accum_grad(&neg);
                }
            },
        ))
    }

    /// Hadamard product.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let data = self.zip_elementwise(other, "mul", |x, y| x * y)?;
        let shape = self.shape();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            data,
            shape,
            vec![self.clone(), other.clone()],
            move |g| {
                if a.requires_grad() {
                    let da = b.with_data(|bd| g.iter().zip(bd).map(|(&gi, &bi)| gi * bi).collect::<Vec<T>>());
                    a.accum_grad(&da);
                }
                if b.requires_grad() {
                    let db = a.with_data(|ad| g.iter().zip(ad).map(|(&gi, &ai)| gi * ai).collect::<Vec<T>>());
                    b.accum_grad(&db);
                }
            },
        ))
    }

    pub fn scale(&self, k: f64) -> Tensor<T> {
        let k = T::cast_from(k);
        let data = self.with_data(|d| d.iter().map(|&v| v * k).collect());
        let shape = self.shape();
        let x = self.clone();
        Tensor::from_op(data, shape, vec![self.clone()], move |g| {
            let dx: Vec<T> = g.iter().map(|&v| v * k).collect();
            x.accum_grad(&dx);
        })
    }

    pub fn add_scalar(&self, k: f64) -> Tensor<T> {
        let k = T::cast_from(k);
        let data = self.with_data(|d| d.iter().map(|&v| v + k).collect());
        let shape = self.shape();
        let x = self.clone();
        Tensor::from_op(data, shape, vec![self.clone()], move |g| {
            x.accum_grad(g);
        })
    }

    /// `[n,d] + [1,d]` with the row broadcast over all n rows.
    /// Backward sums the incoming gradient over rows for the row operand.
    pub fn add_row_broadcast(&self, row: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let (n, d) = dims2(self, "add_row_broadcast")?;
        if row.numel() != d {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_broadcast",
                lhs: self.shape(),
                rhs: row.shape(),
            });
        }
        let data = self.with_data(|x| {
            row.with_data(|r| {
                let mut out = Vec::with_capacity(n * d);
                for i in 0..n {
                    for j in 0..d {
                        out.push(x[i * d + j] + r[j]);
                    }
                }
                out
            })
        });
        let (x, r) = (self.clone(), row.clone());
        Ok(Tensor::from_op(
            data,
            vec![n, d],
            vec![self.clone(), row.clone()],
            move |g| {
                x.accum_grad(g);
                if r.requires_grad() {
                    let mut dr = vec![T::zero(); d];
                    for i in 0..n {
                        for j in 0..d {
                            dr[j] = dr[j] + g[i * d + j];
                        }
                    }
                    r.accum_grad(&dr);
                }
            },
        ))
    }

    /// Concatenate rank-2 tensors along `axis` (0 = rows, 1 = columns).
    /// Backward splits the incoming gradient back to each part.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::Invalid {
                op: "concat",
                msg: "no tensors to concatenate".into(),
            });
        }
        let (r0, c0) = dims2(&parts[0], "concat")?;
        if axis > 1 {
            return Err(TensorError::AxisOutOfRange {
                op: "concat",
                axis,
                shape: parts[0].shape(),
            });
        }
        let mut rows = r0;
        let mut cols = c0;
        for p in &parts[1..] {
            let (r, c) = dims2(p, "concat")?;
            if axis == 0 {
                if c != c0 {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        lhs: parts[0].shape(),
                        rhs: p.shape(),
                    });
                }
                rows += r;
            } else {
                if r != r0 {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        lhs: parts[0].shape(),
                        rhs: p.shape(),
                    });
                }
                cols += c;
            }
        }
        let mut data = vec![T::zero(); rows * cols];
        if axis == 0 {
            let mut off = 0;
            for p in parts {
                p.with_data(|d| {
                    data[off..off + d.len()].copy_from_slice(d);
                    off += d.len();
                });
            }
        } else {
            let mut col_off = 0;
            for p in parts {
                let (r, c) = dims2(p, "concat")?;
                p.with_data(|d| {
                    for i in 0..r {
                        data[i * cols + col_off..i * cols + col_off + c]
                            .copy_from_slice(&d[i * c..(i + 1) * c]);
                    }
                });
                col_off += c;
            }
        }
        let owned: Vec<Tensor<T>> = parts.to_vec();
        let part_shapes: Vec<(usize, usize)> = parts
            .iter()
            .map(|p| {
                let s = p.shape();
                (s[0], s[1])
            })
            .collect();
        let parents = owned.clone();
        Ok(Tensor::from_op(data, vec![rows, cols], parents, move |g| {
            if axis == 0 {
                let mut off = 0;
                for (p, &(r, c)) in owned.iter().zip(&part_shapes) {
                    p.accum_grad(&g[off..off + r * c]);
                    off += r * c;
                }
            } else {
                let mut col_off = 0;
                for (p, &(r, c)) in owned.iter().zip(&part_shapes) {
                    if p.requires_grad() {
                        let mut dp = vec![T::zero(); r * c];
                        for i in 0..r {
                            dp[i * c..(i + 1) * c]
                                .copy_from_slice(&g[i * cols + col_off..i * cols + col_off + c]);
                        }
                        p.accum_grad(&dp);
                    }
                    col_off += c;
                }
            }
        }))
    }

    /// Contiguous slice `[start, end)` along `axis` of a rank-2 tensor.
    /// Backward scatters into a zero gradient of the parent's shape.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor<T>, TensorError> {
        let (rows, cols) = dims2(self, "slice")?;
        if axis > 1 {
            return Err(TensorError::AxisOutOfRange {
                op: "slice",
                axis,
                shape: self.shape(),
            });
        }
        let limit = if axis == 0 { rows } else { cols };
        if start >= end || end > limit {
            return Err(TensorError::Invalid {
                op: "slice",
                msg: format!("range {}..{} invalid for axis {} of shape {:?}", start, end, axis, self.shape()),
            });
        }
        let (out_rows, out_cols) = if axis == 0 {
            (end - start, cols)
        } else {
            (rows, end - start)
        };
        let data = self.with_data(|d| {
            if axis == 0 {
                d[start * cols..end * cols].to_vec()
            } else {
                let mut out = Vec::with_capacity(out_rows * out_cols);
                for i in 0..rows {
                    out.extend_from_slice(&d[i * cols + start..i * cols + end]);
                }
                out
            }
        });
        let x = self.clone();
        Ok(Tensor::from_op(
            data,
            vec![out_rows, out_cols],
            vec![self.clone()],
            move |g| {
                let mut dx = vec![T::zero(); rows * cols];
                if axis == 0 {
                    dx[start * cols..end * cols].copy_from_slice(g);
                } else {
                    for i in 0..rows {
                        dx[i * cols + start..i * cols + end]
                            .copy_from_slice(&g[i * (end - start)..(i + 1) * (end - start)]);
                    }
                }
                x.accum_grad(&dx);
            },
        ))
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor<T>, TensorError> {
        self.slice(0, start, end)
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor<T>, TensorError> {
        self.slice(1, start, end)
    }

    /// Numerically stabilized softmax along `axis` of a rank-2 tensor.
    /// Fails fast on non-finite input rather than propagating NaN.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>, TensorError> {
        match axis {
            1 => self.softmax_rows(),
            0 => self.transpose()?.softmax_rows()?.transpose(),
            _ => Err(TensorError::AxisOutOfRange {
                op: "softmax",
                axis,
                shape: self.shape(),
            }),
        }
    }

    fn softmax_rows(&self) -> Result<Tensor<T>, TensorError> {
        let (rows, cols) = dims2(self, "softmax")?;
        let finite = self.with_data(|d| d.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        let data = self.with_data(|d| {
            let mut out = vec![T::zero(); rows * cols];
            for i in 0..rows {
                let row = &d[i * cols..(i + 1) * cols];
                let mut max = row[0];
                for &v in row {
                    if v > max {
                        max = v;
                    }
                }
                let mut sum = T::zero();
                for j in 0..cols {
                    let e = (row[j] - max).exp();
                    out[i * cols + j] = e;
                    sum = sum + e;
                }
                for j in 0..cols {
                    out[i * cols + j] = out[i * cols + j] / sum;
                }
            }
            out
        });
        let y = data.clone();
        let x = self.clone();
        Ok(Tensor::from_op(data, vec![rows, cols], vec![self.clone()], move |g| {
            // dx = y ⊙ (g − <g, y>_row)
            let mut dx = vec![T::zero(); rows * cols];
            for i in 0..rows {
                let mut dot = T::zero();
                for j in 0..cols {
                    dot = dot + g[i * cols + j] * y[i * cols + j];
                }
                for j in 0..cols {
                    dx[i * cols + j] = y[i * cols + j] * (g[i * cols + j] - dot);
                }
            }
            x.accum_grad(&dx);
        }))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&self) -> Tensor<T> {
        let total = self.with_data(|d| d.iter().fold(T::zero(), |acc, &v| acc + v));
        let n = self.numel();
        let x = self.clone();
        Tensor::from_op(vec![total], vec![1], vec![self.clone()], move |g| {
            let dx = vec![g[0]; n];
            x.accum_grad(&dx);
        })
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        let inv = T::cast_from(1.0 / n as f64);
        let total = self.with_data(|d| d.iter().fold(T::zero(), |acc, &v| acc + v));
        let x = self.clone();
        Tensor::from_op(vec![total * inv], vec![1], vec![self.clone()], move |g| {
            let dx = vec![g[0] * inv; n];
            x.accum_grad(&dx);
        })
    }

    /// View with a new shape over the same element order.
    pub fn reshape(&self, new_shape: Vec<usize>) -> Result<Tensor<T>, TensorError> {
        if numel_of(&new_shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(),
                rhs: new_shape,
            });
        }
        let data = self.to_vec();
        let x = self.clone();
        Ok(Tensor::from_op(data, new_shape, vec![self.clone()], move |g| {
            x.accum_grad(g);
        }))
    }

    pub fn relu(&self) -> Tensor<T> {
        let data = self.with_data(|d| d.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect());
        let shape = self.shape();
        let x = self.clone();
        Tensor::from_op(data, shape, vec![self.clone()], move |g| {
            let dx = x.with_data(|d| {
                g.iter()
                    .zip(d)
                    .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                    .collect::<Vec<T>>()
            });
            x.accum_grad(&dx);
        })
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&self) -> Tensor<T> {
        let c = T::cast_from((2.0 / std::f64::consts::PI).sqrt());
        let a = T::cast_from(0.044715);
        let half = T::cast_from(0.5);
        let data = self.with_data(|d| {
            d.iter()
                .map(|&v| {
                    let u = c * (v + a * v * v * v);
                    half * v * (T::one() + u.tanh())
                })
                .collect()
        });
        let shape = self.shape();
        let x = self.clone();
        Tensor::from_op(data, shape, vec![self.clone()], move |g| {
            let dx = x.with_data(|d| {
                g.iter()
                    .zip(d)
                    .map(|(&gi, &v)| {
                        let u = c * (v + a * v * v * v);
                        let t = u.tanh();
                        let sech2 = T::one() - t * t;
                        let du = c * (T::one() + T::cast_from(3.0) * a * v * v);
                        gi * (half * (T::one() + t) + half * v * sech2 * du)
                    })
                    .collect::<Vec<T>>()
            });
            x.accum_grad(&dx);
        })
    }

    /// Layer normalization over the last axis with affine parameters.
    /// Population variance; the `eps` inside the square root means a
    /// constant row normalizes to exactly 0 and the output equals beta.
    pub fn layer_norm(
        &self,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        eps: f64,
    ) -> Result<Tensor<T>, TensorError> {
        let (rows, cols) = dims2(self, "layer_norm")?;
        if gamma.numel() != cols || beta.numel() != cols {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape(),
                rhs: gamma.shape(),
            });
        }
        let eps = T::cast_from(eps);
        let inv_cols = T::cast_from(1.0 / cols as f64);
        let mut normalized = vec![T::zero(); rows * cols];
        let mut inv_std = vec![T::zero(); rows];
        let data = self.with_data(|d| {
            gamma.with_data(|gm| {
                beta.with_data(|bt| {
                    let mut out = vec![T::zero(); rows * cols];
                    for i in 0..rows {
                        let row = &d[i * cols..(i + 1) * cols];
                        let mut mean = T::zero();
                        for &v in row {
                            mean = mean + v;
                        }
                        mean = mean * inv_cols;
                        let mut var = T::zero();
                        for &v in row {
                            let c = v - mean;
                            var = var + c * c;
                        }
                        var = var * inv_cols;
                        let inv = T::one() / (var + eps).sqrt();
                        inv_std[i] = inv;
                        for j in 0..cols {
                            let y = (row[j] - mean) * inv;
                            normalized[i * cols + j] = y;
                            out[i * cols + j] = y * gm[j] + bt[j];
                        }
                    }
                    out
                })
            })
        });
        let (x, gm, bt) = (self.clone(), gamma.clone(), beta.clone());
        Ok(Tensor::from_op(
            data,
            vec![rows, cols],
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g| {
                if gm.requires_grad() {
                    let mut dg = vec![T::zero(); cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            dg[j] = dg[j] + g[i * cols + j] * normalized[i * cols + j];
                        }
                    }
                    gm.accum_grad(&dg);
                }
                if bt.requires_grad() {
                    let mut db = vec![T::zero(); cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            db[j] = db[j] + g[i * cols + j];
                        }
                    }
                    bt.accum_grad(&db);
                }
                if x.requires_grad() {
                    let mut dx = vec![T::zero(); rows * cols];
                    gm.with_data(|gmv| {
                        for i in 0..rows {
                            let mut mean_dy = T::zero();
                            let mut mean_dyy = T::zero();
                            for j in 0..cols {
                                let dy = g[i * cols + j] * gmv[j];
                                mean_dy = mean_dy + dy;
                                mean_dyy = mean_dyy + dy * normalized[i * cols + j];
                            }
                            mean_dy = mean_dy * inv_cols;
                            mean_dyy = mean_dyy * inv_cols;
                            for j in 0..cols {
                                let dy = g[i * cols + j] * gmv[j];
                                dx[i * cols + j] = inv_std[i]
                                    * (dy - mean_dy - normalized[i * cols + j] * mean_dyy);
                            }
                        }
                    });
                    x.accum_grad(&dx);
                }
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(data: &[f64], rows: usize, cols: usize) -> Tensor<f64> {
        Tensor::new(data.to_vec(), vec![rows, cols]).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let a = t2(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        let eye = t2(&[1.0, 0.0, 0.0, 1.0], 2, 2);
        let c = a.matmul(&eye).unwrap();
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_algebra() {
        let a = Tensor::<f64>::zeros(vec![2, 3]);
        let b = Tensor::<f64>::zeros(vec![3, 5]);
        assert_eq!(a.matmul(&b).unwrap().shape(), vec![2, 5]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::<f64>::zeros(vec![2, 3]);
        let b = Tensor::<f64>::zeros(vec![4, 5]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let x = t2(&[0.0, 0.0], 1, 2);
        assert_eq!(x.softmax(1).unwrap().to_vec(), vec![0.5, 0.5]);

        let big = t2(&[1000.0, 0.0], 1, 2);
        let y = big.softmax(1).unwrap().to_vec();
        assert!(y[0] > 0.999 && y[0] <= 1.0);
        assert!(y[1] >= 0.0 && y[1] < 1e-6);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_rejects_nan() {
        let x = t2(&[f64::NAN, 0.0], 1, 2);
        assert!(matches!(x.softmax(1), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn concat_rows_shape() {
        let a = Tensor::<f64>::zeros(vec![1, 128]);
        let b = Tensor::<f64>::zeros(vec![1, 128]);
        let c = Tensor::concat(&[a, b], 0).unwrap();
        assert_eq!(c.shape(), vec![2, 128]);
    }

    #[test]
    fn slice_concat_partition_identity() {
        let x = t2(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 3);
        let left = x.slice_cols(0, 1).unwrap();
        let right = x.slice_cols(1, 3).unwrap();
        let back = Tensor::concat(&[left, right], 1).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());

        let top = x.slice_rows(0, 1).unwrap();
        let bottom = x.slice_rows(1, 2).unwrap();
        let back = Tensor::concat(&[top, bottom], 0).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
    }

    #[test]
    fn sum_backward_distributes_ones() {
        let x = Tensor::<f64>::param(vec![1.0, 2.0, 3.0], vec![1, 3]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn slice_axis_out_of_range() {
        let x = Tensor::<f64>::zeros(vec![2, 2]);
        assert!(matches!(
            x.slice(2, 0, 1),
            Err(TensorError::AxisOutOfRange { .. })
        ));
    }

    #[test]
    fn layer_norm_constant_row_returns_beta() {
        let x = t2(&[5.0, 5.0, 5.0, 5.0], 1, 4);
        let gamma = Tensor::new(vec![2.0; 4], vec![4]).unwrap();
        let beta = Tensor::new(vec![0.25, 0.5, 0.75, 1.0], vec![4]).unwrap();
        let y = x.layer_norm(&gamma, &beta, 1e-5).unwrap();
        assert_eq!(y.to_vec(), vec![0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn transpose_roundtrip() {
        let x = t2(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 3);
        let back = x.transpose().unwrap().transpose().unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
        assert_eq!(back.shape(), x.shape());
    }
}
