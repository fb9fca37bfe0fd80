//! Differentiable operations recorded on a [`Graph`].
//!
//! Every method validates shapes, computes the forward value eagerly, and
//! pushes a node whose rule accumulates input gradients from the output
//! gradient. Rules read whatever forward state they need out of captured
//! clones, then call `accum_grad` once per input.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{contract, Graph, Result, Tensor, TensorError};
use crate::scalar::Scalar;

impl<S: Scalar> Graph<S> {
    /// Matrix product `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, ka) = a.dims2("matmul")?;
        let (kb, n) = b.dims2("matmul")?;
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let k = ka;
        let out = a.with_data(|ad| {
            b.with_data(|bd| {
                let mut c = vec![S::zero(); m * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = ad[i * k + p];
                        for j in 0..n {
                            c[i * n + j] += aip * bd[p * n + j];
                        }
                    }
                }
                Tensor::new(vec![m, n], c, false)
            })
        })?;
        Ok(self.record(
            "matmul",
            vec![a.clone(), b.clone()],
            out,
            Box::new(move |inputs, dc| {
                let (a, b) = (&inputs[0], &inputs[1]);
                let ad = a.data();
                let bd = b.data();
                // dA = dC · Bᵀ
                let mut da = vec![S::zero(); m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = S::zero();
                        for j in 0..n {
                            s += dc[i * n + j] * bd[p * n + j];
                        }
                        da[i * k + p] = s;
                    }
                }
                // dB = Aᵀ · dC
                let mut db = vec![S::zero(); k * n];
                for p in 0..k {
                    for i in 0..m {
                        let aip = ad[i * k + p];
                        for j in 0..n {
                            db[p * n + j] += aip * dc[i * n + j];
                        }
                    }
                }
                a.accum_grad(&da);
                b.accum_grad(&db);
            }),
        ))
    }

    /// Matrix-vector product `w[m×k] · x[k]`.
    pub fn matvec(&mut self, w: &Tensor<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, k) = w.dims2("matvec")?;
        if x.rank() != 1 || x.numel() != k {
            return Err(TensorError::ShapeMismatch {
                op: "matvec",
                left: w.shape().to_vec(),
                right: x.shape().to_vec(),
            });
        }
        let out = w.with_data(|wd| {
            x.with_data(|xd| {
                let mut y = vec![S::zero(); m];
                for i in 0..m {
                    let mut s = S::zero();
                    for j in 0..k {
                        s += wd[i * k + j] * xd[j];
                    }
                    y[i] = s;
                }
                Tensor::new(vec![m], y, false)
            })
        })?;
        Ok(self.record(
            "matvec",
            vec![w.clone(), x.clone()],
            out,
            Box::new(move |inputs, dy| {
                let (w, x) = (&inputs[0], &inputs[1]);
                let wd = w.data();
                let xd = x.data();
                let mut dw = vec![S::zero(); m * k];
                let mut dx = vec![S::zero(); k];
                for i in 0..m {
                    for j in 0..k {
                        dw[i * k + j] = dy[i] * xd[j];
                        dx[j] += wd[i * k + j] * dy[i];
                    }
                }
                w.accum_grad(&dw);
                x.accum_grad(&dx);
            }),
        ))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let data = a.with_data(|ad| b.with_data(|bd| ad.iter().zip(bd).map(|(&x, &y)| x + y).collect()));
        let out = Tensor::new(a.shape().to_vec(), data, false)?;
        Ok(self.record(
            "add",
            vec![a.clone(), b.clone()],
            out,
            Box::new(|inputs, dc| {
                inputs[0].accum_grad(dc);
                inputs[1].accum_grad(dc);
            }),
        ))
    }

    /// Add a row vector `bias[n]` to every row of `a[m×n]`.
    pub fn add_bias(&mut self, a: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, n) = a.dims2("add_bias")?;
        if bias.rank() != 1 || bias.numel() != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left: a.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        let data = a.with_data(|ad| {
            bias.with_data(|bd| {
                let mut out = ad.to_vec();
                for i in 0..m {
                    for j in 0..n {
                        out[i * n + j] += bd[j];
                    }
                }
                out
            })
        });
        let out = Tensor::new(vec![m, n], data, false)?;
        Ok(self.record(
            "add_bias",
            vec![a.clone(), bias.clone()],
            out,
            Box::new(move |inputs, dc| {
                inputs[0].accum_grad(dc);
                let mut db = vec![S::zero(); n];
                for i in 0..m {
                    for j in 0..n {
                        db[j] += dc[i * n + j];
                    }
                }
                inputs[1].accum_grad(&db);
            }),
        ))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let data = a.with_data(|ad| b.with_data(|bd| ad.iter().zip(bd).map(|(&x, &y)| x * y).collect()));
        let out = Tensor::new(a.shape().to_vec(), data, false)?;
        Ok(self.record(
            "mul",
            vec![a.clone(), b.clone()],
            out,
            Box::new(|inputs, dc| {
                let ad = inputs[0].data();
                let bd = inputs[1].data();
                let da: Vec<S> = dc.iter().zip(&bd).map(|(&g, &y)| g * y).collect();
                let db: Vec<S> = dc.iter().zip(&ad).map(|(&g, &x)| g * x).collect();
                inputs[0].accum_grad(&da);
                inputs[1].accum_grad(&db);
            }),
        ))
    }

    /// Multiply every element by the constant `c`.
    pub fn scale(&mut self, a: &Tensor<S>, c: S) -> Result<Tensor<S>> {
        let data = a.with_data(|ad| ad.iter().map(|&x| x * c).collect());
        let out = Tensor::new(a.shape().to_vec(), data, false)?;
        Ok(self.record(
            "scale",
            vec![a.clone()],
            out,
            Box::new(move |inputs, dc| {
                let da: Vec<S> = dc.iter().map(|&g| g * c).collect();
                inputs[0].accum_grad(&da);
            }),
        ))
    }

    pub fn relu(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let data = a.with_data(|ad| ad.iter().map(|&x| if x > S::zero() { x } else { S::zero() }).collect());
        let out = Tensor::new(a.shape().to_vec(), data, false)?;
        Ok(self.record(
            "relu",
            vec![a.clone()],
            out,
            Box::new(|inputs, dc| {
                let xd = inputs[0].data();
                let da: Vec<S> = dc
                    .iter()
                    .zip(&xd)
                    .map(|(&g, &x)| if x > S::zero() { g } else { S::zero() })
                    .collect();
                inputs[0].accum_grad(&da);
            }),
        ))
    }

    /// GELU with the tanh approximation; smooth, so finite differences
    /// track the analytic gradient everywhere.
    pub fn gelu(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let c = S::of_f64(0.7978845608028654); // sqrt(2/pi)
        let k = S::of_f64(0.044715);
        let half = S::of_f64(0.5);
        let data = a.with_data(|ad| {
            ad.iter()
                .map(|&x| {
                    let u = c * (x + k * x * x * x);
                    half * x * (S::one() + u.tanh())
                })
                .collect()
        });
        let out = Tensor::new(a.shape().to_vec(), data, false)?;
        Ok(self.record(
            "gelu",
            vec![a.clone()],
            out,
            Box::new(move |inputs, dc| {
                let xd = inputs[0].data();
                let three = S::of_f64(3.0);
                let da: Vec<S> = dc
                    .iter()
                    .zip(&xd)
                    .map(|(&g, &x)| {
                        let u = c * (x + k * x * x * x);
                        let t = u.tanh();
                        let sech2 = S::one() - t * t;
                        let du = c * (S::one() + three * k * x * x);
                        g * (half * (S::one() + t) + half * x * sech2 * du)
                    })
                    .collect();
                inputs[0].accum_grad(&da);
            }),
        ))
    }

    /// Elementwise natural logarithm. Callers clamp away from zero first.
    pub fn log(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let data = a.with_data(|ad| ad.iter().map(|&x| x.ln()).collect());
        let out = Tensor::new(a.shape().to_vec(), data, false)?;
        Ok(self.record(
            "log",
            vec![a.clone()],
            out,
            Box::new(|inputs, dc| {
                let xd = inputs[0].data();
                let da: Vec<S> = dc.iter().zip(&xd).map(|(&g, &x)| g / x).collect();
                inputs[0].accum_grad(&da);
            }),
        ))
    }

    /// `max(x, floor)` elementwise; gradient passes where `x >= floor`.
    pub fn clamp_min(&mut self, a: &Tensor<S>, floor: S) -> Result<Tensor<S>> {
        let data = a.with_data(|ad| ad.iter().map(|&x| if x < floor { floor } else { x }).collect());
        let out = Tensor::new(a.shape().to_vec(), data, false)?;
        Ok(self.record(
            "clamp_min",
            vec![a.clone()],
            out,
            Box::new(move |inputs, dc| {
                let xd = inputs[0].data();
                let da: Vec<S> = dc
                    .iter()
                    .zip(&xd)
                    .map(|(&g, &x)| if x >= floor { g } else { S::zero() })
                    .collect();
                inputs[0].accum_grad(&da);
            }),
        ))
    }

    /// Numerically stable softmax: over the vector for rank 1, per row for
    /// rank 2. The running maximum is subtracted before exponentiation.
    pub fn softmax(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let (rows, n) = match *a.shape() {
            [n] => (1, n),
            [m, n] => (m, n),
            _ => return Err(contract("softmax", format!("expected rank 1 or 2, got shape {:?}", a.shape()))),
        };
        let finite = a.with_data(|ad| ad.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        let data = a.with_data(|ad| {
            let mut out = vec![S::zero(); rows * n];
            for r in 0..rows {
                let row = &ad[r * n..(r + 1) * n];
                let mut max = row[0];
                for &x in &row[1..] {
                    if x > max {
                        max = x;
                    }
                }
                let mut sum = S::zero();
                for j in 0..n {
                    let e = (row[j] - max).exp();
                    out[r * n + j] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[r * n + j] /= sum;
                }
            }
            out
        });
        let out = Tensor::new(a.shape().to_vec(), data, false)?;
        let saved = out.clone();
        Ok(self.record(
            "softmax",
            vec![a.clone()],
            out,
            Box::new(move |inputs, dc| {
                let yd = saved.data();
                let mut da = vec![S::zero(); rows * n];
                for r in 0..rows {
                    let mut dot = S::zero();
                    for j in 0..n {
                        dot += dc[r * n + j] * yd[r * n + j];
                    }
                    for j in 0..n {
                        da[r * n + j] = yd[r * n + j] * (dc[r * n + j] - dot);
                    }
                }
                inputs[0].accum_grad(&da);
            }),
        ))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum_all(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let total = a.with_data(|ad| ad.iter().fold(S::zero(), |acc, &x| acc + x));
        let out = Tensor::new(vec![1], vec![total], false)?;
        let numel = a.numel();
        Ok(self.record(
            "sum_all",
            vec![a.clone()],
            out,
            Box::new(move |inputs, dc| {
                inputs[0].accum_grad(&vec![dc[0]; numel]);
            }),
        ))
    }

    /// Mean of all elements, as a one-element tensor.
    pub fn mean_all(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let numel = a.numel();
        let inv = S::one() / S::of_f64(numel as f64);
        let total = a.with_data(|ad| ad.iter().fold(S::zero(), |acc, &x| acc + x));
        let out = Tensor::new(vec![1], vec![total * inv], false)?;
        Ok(self.record(
            "mean_all",
            vec![a.clone()],
            out,
            Box::new(move |inputs, dc| {
                inputs[0].accum_grad(&vec![dc[0] * inv; numel]);
            }),
        ))
    }

    /// Column-wise mean over the rows of `a[m×n]`, yielding `[n]`.
    pub fn mean_rows(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, n) = a.dims2("mean_rows")?;
        let inv = S::one() / S::of_f64(m as f64);
        let data = a.with_data(|ad| {
            let mut out = vec![S::zero(); n];
            for i in 0..m {
                for j in 0..n {
                    out[j] += ad[i * n + j];
                }
            }
            for v in &mut out {
                *v *= inv;
            }
            out
        });
        let out = Tensor::new(vec![n], data, false)?;
        Ok(self.record(
            "mean_rows",
            vec![a.clone()],
            out,
            Box::new(move |inputs, dc| {
                let mut da = vec![S::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = dc[j] * inv;
                    }
                }
                inputs[0].accum_grad(&da);
            }),
        ))
    }

    /// Column-wise maximum over the rows of `a[m×n]`, yielding `[n]`.
    /// Gradient flows to the first row attaining each maximum.
    pub fn max_rows(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, n) = a.dims2("max_rows")?;
        let (data, argmax) = a.with_data(|ad| {
            let mut out = vec![S::zero(); n];
            let mut arg = vec![0usize; n];
            for j in 0..n {
                let mut best = ad[j];
                let mut best_i = 0;
                for i in 1..m {
                    if ad[i * n + j] > best {
                        best = ad[i * n + j];
                        best_i = i;
                    }
                }
                out[j] = best;
                arg[j] = best_i;
            }
            (out, arg)
        });
        let out = Tensor::new(vec![n], data, false)?;
        Ok(self.record(
            "max_rows",
            vec![a.clone()],
            out,
            Box::new(move |inputs, dc| {
                let mut da = vec![S::zero(); m * n];
                for j in 0..n {
                    da[argmax[j] * n + j] = dc[j];
                }
                inputs[0].accum_grad(&da);
            }),
        ))
    }

    /// Elementwise maximum over a non-empty set of same-shape tensors.
    /// Ties resolve to the earliest tensor in the list.
    pub fn max_elementwise(&mut self, tensors: &[Tensor<S>]) -> Result<Tensor<S>> {
        let first = tensors
            .first()
            .ok_or_else(|| contract("max_elementwise", "empty tensor list"))?;
        for t in &tensors[1..] {
            if t.shape() != first.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "max_elementwise",
                    left: first.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
        }
        let numel = first.numel();
        let mut data = first.data();
        let mut argmax = vec![0usize; numel];
        for (ti, t) in tensors.iter().enumerate().skip(1) {
            t.with_data(|td| {
                for e in 0..numel {
                    if td[e] > data[e] {
                        data[e] = td[e];
                        argmax[e] = ti;
                    }
                }
            });
        }
        let out = Tensor::new(first.shape().to_vec(), data, false)?;
        Ok(self.record(
            "max_elementwise",
            tensors.to_vec(),
            out,
            Box::new(move |inputs, dc| {
                for (ti, t) in inputs.iter().enumerate() {
                    let da: Vec<S> = dc
                        .iter()
                        .enumerate()
                        .map(|(e, &g)| if argmax[e] == ti { g } else { S::zero() })
                        .collect();
                    t.accum_grad(&da);
                }
            }),
        ))
    }

    /// Concatenate rank-1 tensors end to end.
    pub fn concat_vecs(&mut self, tensors: &[Tensor<S>]) -> Result<Tensor<S>> {
        if tensors.is_empty() {
            return Err(contract("concat_vecs", "empty tensor list"));
        }
        let mut data = Vec::new();
        let mut lens = Vec::with_capacity(tensors.len());
        for t in tensors {
            if t.rank() != 1 {
                return Err(contract("concat_vecs", format!("expected rank 1, got shape {:?}", t.shape())));
            }
            lens.push(t.numel());
            t.with_data(|td| data.extend_from_slice(td));
        }
        let out = Tensor::new(vec![data.len()], data, false)?;
        Ok(self.record(
            "concat_vecs",
            tensors.to_vec(),
            out,
            Box::new(move |inputs, dc| {
                let mut offset = 0;
                for (t, &len) in inputs.iter().zip(&lens) {
                    t.accum_grad(&dc[offset..offset + len]);
                    offset += len;
                }
            }),
        ))
    }

    /// Concatenate matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, tensors: &[Tensor<S>]) -> Result<Tensor<S>> {
        let first = tensors
            .first()
            .ok_or_else(|| contract("concat_cols", "empty tensor list"))?;
        let (m, _) = first.dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(tensors.len());
        let mut total = 0;
        for t in tensors {
            let (tm, tn) = t.dims2("concat_cols")?;
            if tm != m {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: first.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            widths.push(tn);
            total += tn;
        }
        let mut data = vec![S::zero(); m * total];
        let mut offset = 0;
        for (t, &w) in tensors.iter().zip(&widths) {
            t.with_data(|td| {
                for i in 0..m {
                    data[i * total + offset..i * total + offset + w].copy_from_slice(&td[i * w..(i + 1) * w]);
                }
            });
            offset += w;
        }
        let out = Tensor::new(vec![m, total], data, false)?;
        Ok(self.record(
            "concat_cols",
            tensors.to_vec(),
            out,
            Box::new(move |inputs, dc| {
                let mut offset = 0;
                for (t, &w) in inputs.iter().zip(&widths) {
                    let mut dt = vec![S::zero(); m * w];
                    for i in 0..m {
                        dt[i * w..(i + 1) * w].copy_from_slice(&dc[i * total + offset..i * total + offset + w]);
                    }
                    t.accum_grad(&dt);
                    offset += w;
                }
            }),
        ))
    }

    /// Stack rank-1 tensors of equal length into a `[k×n]` matrix.
    pub fn stack_rows(&mut self, tensors: &[Tensor<S>]) -> Result<Tensor<S>> {
        let first = tensors
            .first()
            .ok_or_else(|| contract("stack_rows", "empty tensor list"))?;
        if first.rank() != 1 {
            return Err(contract("stack_rows", format!("expected rank 1, got shape {:?}", first.shape())));
        }
        let n = first.numel();
        let mut data = Vec::with_capacity(tensors.len() * n);
        for t in tensors {
            if t.rank() != 1 || t.numel() != n {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_rows",
                    left: first.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            t.with_data(|td| data.extend_from_slice(td));
        }
        let out = Tensor::new(vec![tensors.len(), n], data, false)?;
        Ok(self.record(
            "stack_rows",
            tensors.to_vec(),
            out,
            Box::new(move |inputs, dc| {
                for (i, t) in inputs.iter().enumerate() {
                    t.accum_grad(&dc[i * n..(i + 1) * n]);
                }
            }),
        ))
    }

    /// Gather rows of `table[v×n]` by index; the embedding lookup.
    /// Gradient scatter-adds each output row back onto its source row.
    pub fn gather_rows(&mut self, table: &Tensor<S>, ids: &[usize]) -> Result<Tensor<S>> {
        let (v, n) = table.dims2("gather_rows")?;
        if ids.is_empty() {
            return Err(contract("gather_rows", "empty index list"));
        }
        for &id in ids {
            if id >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: id,
                    size: v,
                });
            }
        }
        let k = ids.len();
        let data = table.with_data(|td| {
            let mut out = Vec::with_capacity(k * n);
            for &id in ids {
                out.extend_from_slice(&td[id * n..(id + 1) * n]);
            }
            out
        });
        let out = Tensor::new(vec![k, n], data, false)?;
        let ids = ids.to_vec();
        Ok(self.record(
            "gather_rows",
            vec![table.clone()],
            out,
            Box::new(move |inputs, dc| {
                let mut dt = vec![S::zero(); v * n];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..n {
                        dt[id * n + j] += dc[r * n + j];
                    }
                }
                inputs[0].accum_grad(&dt);
            }),
        ))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, a: &Tensor<S>, start: usize, len: usize) -> Result<Tensor<S>> {
        let (m, n) = a.dims2("slice_cols")?;
        if len == 0 || start + len > n {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                size: n,
            });
        }
        let data = a.with_data(|ad| {
            let mut out = Vec::with_capacity(m * len);
            for i in 0..m {
                out.extend_from_slice(&ad[i * n + start..i * n + start + len]);
            }
            out
        });
        let out = Tensor::new(vec![m, len], data, false)?;
        Ok(self.record(
            "slice_cols",
            vec![a.clone()],
            out,
            Box::new(move |inputs, dc| {
                let mut da = vec![S::zero(); m * n];
                for i in 0..m {
                    da[i * n + start..i * n + start + len].copy_from_slice(&dc[i * len..(i + 1) * len]);
                }
                inputs[0].accum_grad(&da);
            }),
        ))
    }

    pub fn transpose(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, n) = a.dims2("transpose")?;
        let data = a.with_data(|ad| {
            let mut out = vec![S::zero(); m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = ad[i * n + j];
                }
            }
            out
        });
        let out = Tensor::new(vec![n, m], data, false)?;
        Ok(self.record(
            "transpose",
            vec![a.clone()],
            out,
            Box::new(move |inputs, dc| {
                let mut da = vec![S::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = dc[j * m + i];
                    }
                }
                inputs[0].accum_grad(&da);
            }),
        ))
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshape(&mut self, a: &Tensor<S>, shape: Vec<usize>) -> Result<Tensor<S>> {
        let numel: usize = shape.iter().product();
        if numel != a.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: a.shape().to_vec(),
                right: shape,
            });
        }
        let out = Tensor::new(shape, a.data(), false)?;
        Ok(self.record(
            "reshape",
            vec![a.clone()],
            out,
            Box::new(|inputs, dc| {
                inputs[0].accum_grad(dc);
            }),
        ))
    }

    /// Row `i` of a matrix, as a rank-1 tensor.
    pub fn row(&mut self, a: &Tensor<S>, i: usize) -> Result<Tensor<S>> {
        let (_, n) = a.dims2("row")?;
        let gathered = self.gather_rows(a, &[i])?;
        self.reshape(&gathered, vec![n])
    }

    /// Single element of a rank-1 tensor, as a one-element tensor.
    pub fn pick(&mut self, a: &Tensor<S>, index: usize) -> Result<Tensor<S>> {
        if a.rank() != 1 {
            return Err(contract("pick", format!("expected rank 1, got shape {:?}", a.shape())));
        }
        let n = a.numel();
        if index >= n {
            return Err(TensorError::IndexOutOfRange {
                op: "pick",
                index,
                size: n,
            });
        }
        let value = a.with_data(|ad| ad[index]);
        let out = Tensor::new(vec![1], vec![value], false)?;
        Ok(self.record(
            "pick",
            vec![a.clone()],
            out,
            Box::new(move |inputs, dc| {
                let mut da = vec![S::zero(); n];
                da[index] = dc[0];
                inputs[0].accum_grad(&da);
            }),
        ))
    }

    /// Row-wise layer normalization of `x[m×n]` with per-column gain and
    /// bias, using population variance.
    pub fn layer_norm(
        &mut self,
        x: &Tensor<S>,
        gain: &Tensor<S>,
        bias: &Tensor<S>,
        eps: f64,
    ) -> Result<Tensor<S>> {
        let (m, n) = x.dims2("layer_norm")?;
        if gain.rank() != 1 || gain.numel() != n || bias.rank() != 1 || bias.numel() != n {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                left: x.shape().to_vec(),
                right: gain.shape().to_vec(),
            });
        }
        let eps = S::of_f64(eps);
        let inv_n = S::one() / S::of_f64(n as f64);
        let mut xhat = vec![S::zero(); m * n];
        let mut inv_std = vec![S::zero(); m];
        let data = x.with_data(|xd| {
            gain.with_data(|gd| {
                bias.with_data(|bd| {
                    let mut out = vec![S::zero(); m * n];
                    for i in 0..m {
                        let row = &xd[i * n..(i + 1) * n];
                        let mut mean = S::zero();
                        for &v in row {
                            mean += v;
                        }
                        mean *= inv_n;
                        let mut var = S::zero();
                        for &v in row {
                            let d = v - mean;
                            var += d * d;
                        }
                        var *= inv_n;
                        let istd = S::one() / (var + eps).sqrt();
                        inv_std[i] = istd;
                        for j in 0..n {
                            let h = (row[j] - mean) * istd;
                            xhat[i * n + j] = h;
                            out[i * n + j] = gd[j] * h + bd[j];
                        }
                    }
                    out
                })
            })
        });
        let out = Tensor::new(vec![m, n], data, false)?;
        Ok(self.record(
            "layer_norm",
            vec![x.clone(), gain.clone(), bias.clone()],
            out,
            Box::new(move |inputs, dc| {
                let gd = inputs[1].data();
                let mut dx = vec![S::zero(); m * n];
                let mut dgain = vec![S::zero(); n];
                let mut dbias = vec![S::zero(); n];
                for i in 0..m {
                    let mut mean_dxhat = S::zero();
                    let mut mean_dxhat_xhat = S::zero();
                    for j in 0..n {
                        let dy = dc[i * n + j];
                        let h = xhat[i * n + j];
                        dgain[j] += dy * h;
                        dbias[j] += dy;
                        let dxh = dy * gd[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * h;
                    }
                    mean_dxhat *= inv_n;
                    mean_dxhat_xhat *= inv_n;
                    for j in 0..n {
                        let dxh = dc[i * n + j] * gd[j];
                        dx[i * n + j] = inv_std[i] * (dxh - mean_dxhat - xhat[i * n + j] * mean_dxhat_xhat);
                    }
                }
                inputs[0].accum_grad(&dx);
                inputs[1].accum_grad(&dgain);
                inputs[2].accum_grad(&dbias);
            }),
        ))
    }

    /// Inverted dropout: each element is kept with probability `1 - rate`
    /// and scaled by `1 / (1 - rate)`, so inference needs no rescaling.
    /// `rate == 0` returns the input unchanged.
    pub fn dropout(&mut self, a: &Tensor<S>, rate: f64, rng: &mut ChaCha8Rng) -> Result<Tensor<S>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(contract("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(a.clone());
        }
        let keep = 1.0 - rate;
        let scale = S::of_f64(1.0 / keep);
        let mask: Vec<S> = (0..a.numel())
            .map(|_| if rng.random::<f64>() < keep { scale } else { S::zero() })
            .collect();
        let data = a.with_data(|ad| ad.iter().zip(&mask).map(|(&x, &m)| x * m).collect());
        let out = Tensor::new(a.shape().to_vec(), data, false)?;
        Ok(self.record(
            "dropout",
            vec![a.clone()],
            out,
            Box::new(move |inputs, dc| {
                let da: Vec<S> = dc.iter().zip(&mask).map(|(&g, &m)| g * m).collect();
                inputs[0].accum_grad(&da);
            }),
        ))
    }
}
