use super::tensor::Tensor;
use super::{c, Real, NORM_EPS};
use crate::error::{Error, Result};

/// Floor for arguments of `log`; keeps focal-loss terms finite at p ∈ {0,1}.
pub const LOG_EPS: f64 = 1e-12;
/// Variance floor inside `layer_norm`.
pub const LN_EPS: f64 = 1e-5;
/// Inputs to `exp` are clamped here; e^700 is still finite in f64.
const EXP_CLAMP: f64 = 700.0;

fn dims2<R: Real>(t: &Tensor<R>, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::Dimension {
            op,
            lhs: other.to_vec(),
            rhs: vec![],
        }),
    }
}

fn same_shape<R: Real>(a: &Tensor<R>, b: &Tensor<R>, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn require_scalar<R: Real>(s: &Tensor<R>, op: &'static str) -> Result<()> {
    if !s.is_scalar() {
        return Err(Error::Dimension {
            op,
            lhs: s.shape().to_vec(),
            rhs: vec![1],
        });
    }
    Ok(())
}

fn l2_norm<R: Real>(xs: &[R]) -> R {
    xs.iter().fold(R::zero(), |acc, &x| acc + x * x).sqrt()
}

fn stable_sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

/// Row-wise stable softmax of `data` viewed as `rows` rows of `cols` entries,
/// each pre-divided by `temp`.
fn softmax_forward<R: Real>(data: &[R], rows: usize, cols: usize, temp: R) -> Vec<R> {
    let mut out = vec![R::zero(); data.len()];
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        let mx = row
            .iter()
            .fold(R::neg_infinity(), |m, &x| if x > m { x } else { m });
        let mut sum = R::zero();
        for j in 0..cols {
            let e = ((row[j] - mx) / temp).exp();
            out[r * cols + j] = e;
            sum += e;
        }
        for j in 0..cols {
            out[r * cols + j] /= sum;
        }
    }
    out
}

/// dL/dx for row-wise softmax: (y ⊙ (g − ⟨g,y⟩)) / temp, per row.
fn softmax_backward<R: Real>(grad: &[R], out: &[R], rows: usize, cols: usize, temp: R) -> Vec<R> {
    let mut dx = vec![R::zero(); out.len()];
    for r in 0..rows {
        let base = r * cols;
        let mut dot = R::zero();
        for j in 0..cols {
            dot += grad[base + j] * out[base + j];
        }
        for j in 0..cols {
            dx[base + j] = out[base + j] * (grad[base + j] - dot) / temp;
        }
    }
    dx
}

impl<R: Real> Tensor<R> {
    /// Same data viewed under a new shape; element count must match.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<R>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|grad, _, parents| parents[0].accumulate_grad(grad)),
        ))
    }

    pub fn add(&self, other: &Tensor<R>) -> Result<Tensor<R>> {
        same_shape(self, other, "add")?;
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|grad, _, parents| {
                parents[0].accumulate_grad(grad);
                parents[1].accumulate_grad(grad);
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor<R>) -> Result<Tensor<R>> {
        same_shape(self, other, "sub")?;
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|grad, _, parents| {
                parents[0].accumulate_grad(grad);
                let neg: Vec<R> = grad.iter().map(|&g| -g).collect();
                parents[1].accumulate_grad(&neg);
            }),
        ))
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Tensor<R>) -> Result<Tensor<R>> {
        same_shape(self, other, "hadamard")?;
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|grad, _, parents| {
                let a = parents[0].to_vec();
                let b = parents[1].to_vec();
                let da: Vec<R> = grad.iter().zip(&b).map(|(&g, &x)| g * x).collect();
                let db: Vec<R> = grad.iter().zip(&a).map(|(&g, &x)| g * x).collect();
                parents[0].accumulate_grad(&da);
                parents[1].accumulate_grad(&db);
            }),
        ))
    }

    /// Elementwise quotient; every denominator magnitude must exceed the norm
    /// floor.
    pub fn div(&self, other: &Tensor<R>) -> Result<Tensor<R>> {
        same_shape(self, other, "div")?;
        if other.data().iter().any(|b| b.abs() <= c::<R>(NORM_EPS)) {
            return Err(Error::DegenerateInput(
                "div denominator within 1e-12 of zero".to_string(),
            ));
        }
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a / b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|grad, out, parents| {
                let b = parents[1].to_vec();
                let da: Vec<R> = grad.iter().zip(&b).map(|(&g, &x)| g / x).collect();
                let db: Vec<R> = grad
                    .iter()
                    .zip(out.iter().zip(&b))
                    .map(|(&g, (&y, &x))| -g * y / x)
                    .collect();
                parents[0].accumulate_grad(&da);
                parents[1].accumulate_grad(&db);
            }),
        ))
    }

    /// Elementwise minimum; on ties the gradient routes to `self`.
    pub fn minimum(&self, other: &Tensor<R>) -> Result<Tensor<R>> {
        same_shape(self, other, "minimum")?;
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| if a <= b { a } else { b })
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|grad, _, parents| {
                let a = parents[0].to_vec();
                let b = parents[1].to_vec();
                let mut da = vec![R::zero(); grad.len()];
                let mut db = vec![R::zero(); grad.len()];
                for i in 0..grad.len() {
                    if a[i] <= b[i] {
                        da[i] = grad[i];
                    } else {
                        db[i] = grad[i];
                    }
                }
                parents[0].accumulate_grad(&da);
                parents[1].accumulate_grad(&db);
            }),
        ))
    }

    /// Elementwise maximum; on ties the gradient routes to `self`.
    pub fn maximum(&self, other: &Tensor<R>) -> Result<Tensor<R>> {
        same_shape(self, other, "maximum")?;
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| if a >= b { a } else { b })
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|grad, _, parents| {
                let a = parents[0].to_vec();
                let b = parents[1].to_vec();
                let mut da = vec![R::zero(); grad.len()];
                let mut db = vec![R::zero(); grad.len()];
                for i in 0..grad.len() {
                    if a[i] >= b[i] {
                        da[i] = grad[i];
                    } else {
                        db[i] = grad[i];
                    }
                }
                parents[0].accumulate_grad(&da);
                parents[1].accumulate_grad(&db);
            }),
        ))
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, k: f64) -> Tensor<R> {
        let kk = c::<R>(k);
        let data = self.data().iter().map(|&x| x * kk).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |grad, _, parents| {
                let dx: Vec<R> = grad.iter().map(|&g| g * kk).collect();
                parents[0].accumulate_grad(&dx);
            }),
        )
    }

    /// Add a constant to every element.
    pub fn add_scalar(&self, k: f64) -> Tensor<R> {
        let kk = c::<R>(k);
        let data = self.data().iter().map(|&x| x + kk).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|grad, _, parents| parents[0].accumulate_grad(grad)),
        )
    }

    pub fn neg(&self) -> Tensor<R> {
        self.scale(-1.0)
    }

    /// Multiply by a scalar tensor (gradient flows to both operands).
    pub fn scale_by(&self, s: &Tensor<R>) -> Result<Tensor<R>> {
        require_scalar(s, "scale_by")?;
        let sv = s.value();
        let data = self.data().iter().map(|&x| x * sv).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), s.clone()],
            Box::new(|grad, _, parents| {
                let a = parents[0].to_vec();
                let sv = parents[1].value();
                let da: Vec<R> = grad.iter().map(|&g| g * sv).collect();
                let ds = grad
                    .iter()
                    .zip(&a)
                    .fold(R::zero(), |acc, (&g, &x)| acc + g * x);
                parents[0].accumulate_grad(&da);
                parents[1].accumulate_grad(&[ds]);
            }),
        ))
    }

    /// Divide by a scalar tensor whose magnitude exceeds the norm floor.
    pub fn div_by(&self, s: &Tensor<R>) -> Result<Tensor<R>> {
        require_scalar(s, "div_by")?;
        let sv = s.value();
        if sv.abs() <= c::<R>(NORM_EPS) {
            return Err(Error::DegenerateInput(
                "div_by denominator within 1e-12 of zero".to_string(),
            ));
        }
        let data = self.data().iter().map(|&x| x / sv).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), s.clone()],
            Box::new(|grad, _, parents| {
                let a = parents[0].to_vec();
                let sv = parents[1].value();
                let da: Vec<R> = grad.iter().map(|&g| g / sv).collect();
                let ds = grad
                    .iter()
                    .zip(&a)
                    .fold(R::zero(), |acc, (&g, &x)| acc - g * x / (sv * sv));
                parents[0].accumulate_grad(&da);
                parents[1].accumulate_grad(&[ds]);
            }),
        ))
    }

    pub fn abs(&self) -> Tensor<R> {
        let data = self.data().iter().map(|x| x.abs()).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|grad, _, parents| {
                let x = parents[0].to_vec();
                let dx: Vec<R> = grad
                    .iter()
                    .zip(&x)
                    .map(|(&g, &v)| {
                        // Subgradient 0 at the kink.
                        if v > R::zero() {
                            g
                        } else if v < R::zero() {
                            -g
                        } else {
                            R::zero()
                        }
                    })
                    .collect();
                parents[0].accumulate_grad(&dx);
            }),
        )
    }

    pub fn relu(&self) -> Tensor<R> {
        let data = self
            .data()
            .iter()
            .map(|&x| if x > R::zero() { x } else { R::zero() })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|grad, _, parents| {
                let x = parents[0].to_vec();
                let dx: Vec<R> = grad
                    .iter()
                    .zip(&x)
                    .map(|(&g, &v)| if v > R::zero() { g } else { R::zero() })
                    .collect();
                parents[0].accumulate_grad(&dx);
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor<R> {
        let data = self.data().iter().map(|&x| stable_sigmoid(x)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|grad, out, parents| {
                let dx: Vec<R> = grad
                    .iter()
                    .zip(out)
                    .map(|(&g, &y)| g * y * (R::one() - y))
                    .collect();
                parents[0].accumulate_grad(&dx);
            }),
        )
    }

    /// Natural log with the argument floored at [`LOG_EPS`]; gradient is zero
    /// in the floored region.
    pub fn log(&self) -> Tensor<R> {
        let eps = c::<R>(LOG_EPS);
        let data = self
            .data()
            .iter()
            .map(|&x| if x > eps { x.ln() } else { eps.ln() })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |grad, _, parents| {
                let x = parents[0].to_vec();
                let dx: Vec<R> = grad
                    .iter()
                    .zip(&x)
                    .map(|(&g, &v)| if v > eps { g / v } else { R::zero() })
                    .collect();
                parents[0].accumulate_grad(&dx);
            }),
        )
    }

    /// e^x with the argument clamped at ±[`EXP_CLAMP`] to stay finite.
    pub fn exp(&self) -> Tensor<R> {
        let hi = c::<R>(EXP_CLAMP);
        let data = self
            .data()
            .iter()
            .map(|&x| {
                let v = if x > hi {
                    hi
                } else if x < -hi {
                    -hi
                } else {
                    x
                };
                v.exp()
            })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |grad, out, parents| {
                let x = parents[0].to_vec();
                let dx: Vec<R> = grad
                    .iter()
                    .zip(out.iter().zip(&x))
                    .map(|(&g, (&y, &v))| if v.abs() > hi { R::zero() } else { g * y })
                    .collect();
                parents[0].accumulate_grad(&dx);
            }),
        )
    }

    /// GELU in the tanh form: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
    pub fn gelu(&self) -> Tensor<R> {
        let k = c::<R>(0.7978845608028654); // √(2/π)
        let a = c::<R>(0.044715);
        let half = c::<R>(0.5);
        let data = self
            .data()
            .iter()
            .map(|&x| {
                let u = k * (x + a * x * x * x);
                half * x * (R::one() + u.tanh())
            })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |grad, _, parents| {
                let xs = parents[0].to_vec();
                let dx: Vec<R> = grad
                    .iter()
                    .zip(&xs)
                    .map(|(&g, &x)| {
                        let u = k * (x + a * x * x * x);
                        let t = u.tanh();
                        let sech2 = R::one() - t * t;
                        let du = k * (R::one() + c::<R>(3.0) * a * x * x);
                        g * (half * (R::one() + t) + half * x * sech2 * du)
                    })
                    .collect();
                parents[0].accumulate_grad(&dx);
            }),
        )
    }

    pub fn matmul(&self, other: &Tensor<R>) -> Result<Tensor<R>> {
        let (m, ka) = dims2(self, "matmul")?;
        let (kb, n) = dims2(other, "matmul")?;
        if ka != kb {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let a = self.data();
        let b = other.data();
        let mut out = vec![R::zero(); m * n];
        // Slice-per-row loops keep every inner access contiguous and
        // bounds-check free; training spends most of its time here.
        for (arow, orow) in a.chunks_exact(ka).zip(out.chunks_exact_mut(n)) {
            for (&av, brow) in arow.iter().zip(b.chunks_exact(n)) {
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        drop(a);
        drop(b);
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |grad, _, parents| {
                let a = parents[0].to_vec();
                let b = parents[1].to_vec();
                // dA = G · Bᵀ, dB = Aᵀ · G, fused over rows of G.
                let mut da = vec![R::zero(); m * ka];
                let mut db = vec![R::zero(); ka * n];
                for i in 0..m {
                    let grow = &grad[i * n..(i + 1) * n];
                    let arow = &a[i * ka..(i + 1) * ka];
                    let darow = &mut da[i * ka..(i + 1) * ka];
                    for t in 0..ka {
                        let brow = &b[t * n..(t + 1) * n];
                        let mut s = R::zero();
                        for (&g, &bv) in grow.iter().zip(brow) {
                            s += g * bv;
                        }
                        darow[t] = s;
                        let av = arow[t];
                        let dbrow = &mut db[t * n..(t + 1) * n];
                        for (d, &g) in dbrow.iter_mut().zip(grow) {
                            *d += av * g;
                        }
                    }
                }
                parents[0].accumulate_grad(&da);
                parents[1].accumulate_grad(&db);
            }),
        ))
    }

    /// Row vector times matrix: [k] × [k×n] → [n].
    pub fn vecmat(&self, w: &Tensor<R>) -> Result<Tensor<R>> {
        let (k, n) = dims2(w, "vecmat")?;
        if !self.is_vector() || self.numel() != k {
            return Err(Error::Dimension {
                op: "vecmat",
                lhs: self.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        let x = self.data();
        let wd = w.data();
        let mut out = vec![R::zero(); n];
        for (&xv, wrow) in x.iter().zip(wd.chunks_exact(n)) {
            for (o, &wv) in out.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
        drop(x);
        drop(wd);
        Ok(Tensor::from_op(
            vec![n],
            out,
            vec![self.clone(), w.clone()],
            Box::new(move |grad, _, parents| {
                let x = parents[0].to_vec();
                let wd = parents[1].to_vec();
                let mut dx = vec![R::zero(); k];
                let mut dw = vec![R::zero(); k * n];
                for i in 0..k {
                    let wrow = &wd[i * n..(i + 1) * n];
                    let dwrow = &mut dw[i * n..(i + 1) * n];
                    let xv = x[i];
                    let mut s = R::zero();
                    for ((&g, &wv), d) in grad.iter().zip(wrow).zip(dwrow.iter_mut()) {
                        s += g * wv;
                        *d = xv * g;
                    }
                    dx[i] = s;
                }
                parents[0].accumulate_grad(&dx);
                parents[1].accumulate_grad(&dw);
            }),
        ))
    }

    /// Rank-one product of two vectors: out[i][j] = u[i]·v[j].
    pub fn outer(&self, other: &Tensor<R>) -> Result<Tensor<R>> {
        if !self.is_vector() || !other.is_vector() {
            return Err(Error::Dimension {
                op: "outer",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let (m, n) = (self.numel(), other.numel());
        let u = self.data();
        let v = other.data();
        let mut out = vec![R::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = u[i] * v[j];
            }
        }
        drop(u);
        drop(v);
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |grad, _, parents| {
                let u = parents[0].to_vec();
                let v = parents[1].to_vec();
                let mut du = vec![R::zero(); m];
                let mut dv = vec![R::zero(); n];
                for i in 0..m {
                    for j in 0..n {
                        du[i] += grad[i * n + j] * v[j];
                        dv[j] += grad[i * n + j] * u[i];
                    }
                }
                parents[0].accumulate_grad(&du);
                parents[1].accumulate_grad(&dv);
            }),
        ))
    }

    /// Affine map x·W + b. Accepts a vector [in] → [out] or a matrix
    /// [m×in] → [m×out]; W is [in×out], b is [out].
    pub fn linear(&self, w: &Tensor<R>, b: &Tensor<R>) -> Result<Tensor<R>> {
        match self.shape().len() {
            1 => self.vecmat(w)?.add(b),
            2 => self.matmul(w)?.add_row(b),
            _ => Err(Error::Dimension {
                op: "linear",
                lhs: self.shape().to_vec(),
                rhs: w.shape().to_vec(),
            }),
        }
    }

    pub fn transpose(&self) -> Result<Tensor<R>> {
        let (m, n) = dims2(self, "transpose")?;
        let a = self.data();
        let mut out = vec![R::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = a[i * n + j];
            }
        }
        drop(a);
        Ok(Tensor::from_op(
            vec![n, m],
            out,
            vec![self.clone()],
            Box::new(move |grad, _, parents| {
                let mut dx = vec![R::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = grad[j * m + i];
                    }
                }
                parents[0].accumulate_grad(&dx);
            }),
        ))
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn concat_rows(parts: &[Tensor<R>]) -> Result<Tensor<R>> {
        if parts.is_empty() {
            return Err(Error::Parameter(
                "concat_rows requires at least one part".to_string(),
            ));
        }
        let (_, cols) = dims2(&parts[0], "concat_rows")?;
        let mut row_counts = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for p in parts {
            let (r, pc) = dims2(p, "concat_rows")?;
            if pc != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            row_counts.push(r);
            data.extend_from_slice(&p.data());
        }
        let total: usize = row_counts.iter().sum();
        Ok(Tensor::from_op(
            vec![total, cols],
            data,
            parts.to_vec(),
            Box::new(move |grad, _, parents| {
                let mut offset = 0;
                for (p, &r) in parents.iter().zip(&row_counts) {
                    p.accumulate_grad(&grad[offset..offset + r * cols]);
                    offset += r * cols;
                }
            }),
        ))
    }

    /// Stack matrices with equal row counts side by side.
    pub fn concat_cols(parts: &[Tensor<R>]) -> Result<Tensor<R>> {
        if parts.is_empty() {
            return Err(Error::Parameter(
                "concat_cols requires at least one part".to_string(),
            ));
        }
        let (rows, _) = dims2(&parts[0], "concat_cols")?;
        let mut col_counts = Vec::with_capacity(parts.len());
        for p in parts {
            let (pr, pc) = dims2(p, "concat_cols")?;
            if pr != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            col_counts.push(pc);
        }
        let total: usize = col_counts.iter().sum();
        let mut data = vec![R::zero(); rows * total];
        let mut offset = 0;
        for (p, &pc) in parts.iter().zip(&col_counts) {
            let pd = p.data();
            for i in 0..rows {
                data[i * total + offset..i * total + offset + pc]
                    .copy_from_slice(&pd[i * pc..(i + 1) * pc]);
            }
            offset += pc;
        }
        Ok(Tensor::from_op(
            vec![rows, total],
            data,
            parts.to_vec(),
            Box::new(move |grad, _, parents| {
                let mut offset = 0;
                for (p, &pc) in parents.iter().zip(&col_counts) {
                    let mut dp = vec![R::zero(); rows * pc];
                    for i in 0..rows {
                        dp[i * pc..(i + 1) * pc]
                            .copy_from_slice(&grad[i * total + offset..i * total + offset + pc]);
                    }
                    p.accumulate_grad(&dp);
                    offset += pc;
                }
            }),
        ))
    }

    /// Column-wise mean over rows: [m×n] → [n].
    pub fn mean_rows(&self) -> Result<Tensor<R>> {
        let (m, n) = dims2(self, "mean_rows")?;
        let a = self.data();
        let inv = R::one() / c::<R>(m as f64);
        let mut out = vec![R::zero(); n];
        for i in 0..m {
            for j in 0..n {
                out[j] += a[i * n + j];
            }
        }
        for o in out.iter_mut() {
            *o *= inv;
        }
        drop(a);
        Ok(Tensor::from_op(
            vec![n],
            out,
            vec![self.clone()],
            Box::new(move |grad, _, parents| {
                let mut dx = vec![R::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = grad[j] * inv;
                    }
                }
                parents[0].accumulate_grad(&dx);
            }),
        ))
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self) -> Tensor<R> {
        let s = self.data().iter().fold(R::zero(), |acc, &x| acc + x);
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(|grad, _, parents| {
                let dx = vec![grad[0]; parents[0].numel()];
                parents[0].accumulate_grad(&dx);
            }),
        )
    }

    /// Mean of all elements, as a scalar tensor.
    pub fn mean(&self) -> Tensor<R> {
        let n = self.numel();
        let inv = R::one() / c::<R>(n as f64);
        let s = self.data().iter().fold(R::zero(), |acc, &x| acc + x) * inv;
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |grad, _, parents| {
                let dx = vec![grad[0] * inv; parents[0].numel()];
                parents[0].accumulate_grad(&dx);
            }),
        )
    }

    /// Select rows by index (repeats allowed); gradient scatter-adds back.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor<R>> {
        let (m, n) = dims2(self, "gather_rows")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::Parameter(format!(
                "gather_rows index {bad} out of range for {m} rows"
            )));
        }
        let a = self.data();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(&a[i * n..(i + 1) * n]);
        }
        drop(a);
        let idx = indices.to_vec();
        Ok(Tensor::from_op(
            vec![indices.len(), n],
            data,
            vec![self.clone()],
            Box::new(move |grad, _, parents| {
                let mut dx = vec![R::zero(); m * n];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..n {
                        dx[i * n + j] += grad[r * n + j];
                    }
                }
                parents[0].accumulate_grad(&dx);
            }),
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor<R>> {
        let (m, n) = dims2(self, "slice_cols")?;
        if start >= end || end > n {
            return Err(Error::Parameter(format!(
                "slice_cols range {start}..{end} invalid for {n} columns"
            )));
        }
        let a = self.data();
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&a[i * n + start..i * n + end]);
        }
        drop(a);
        Ok(Tensor::from_op(
            vec![m, w],
            data,
            vec![self.clone()],
            Box::new(move |grad, _, parents| {
                let mut dx = vec![R::zero(); m * n];
                for i in 0..m {
                    dx[i * n + start..i * n + end].copy_from_slice(&grad[i * w..(i + 1) * w]);
                }
                parents[0].accumulate_grad(&dx);
            }),
        ))
    }

    /// Broadcast-add a vector to every row of a matrix.
    pub fn add_row(&self, v: &Tensor<R>) -> Result<Tensor<R>> {
        let (m, n) = dims2(self, "add_row")?;
        if !v.is_vector() || v.numel() != n {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: self.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let a = self.data();
        let vd = v.data();
        let mut data = vec![R::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] = a[i * n + j] + vd[j];
            }
        }
        drop(a);
        drop(vd);
        Ok(Tensor::from_op(
            vec![m, n],
            data,
            vec![self.clone(), v.clone()],
            Box::new(move |grad, _, parents| {
                parents[0].accumulate_grad(grad);
                let mut dv = vec![R::zero(); n];
                for i in 0..m {
                    for j in 0..n {
                        dv[j] += grad[i * n + j];
                    }
                }
                parents[1].accumulate_grad(&dv);
            }),
        ))
    }

    /// Stable softmax of a vector at the given temperature.
    pub fn softmax(&self, temperature: f64) -> Result<Tensor<R>> {
        if !self.is_vector() {
            return Err(Error::Dimension {
                op: "softmax",
                lhs: self.shape().to_vec(),
                rhs: vec![],
            });
        }
        if temperature <= 0.0 {
            return Err(Error::Parameter(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        let n = self.numel();
        let temp = c::<R>(temperature);
        let data = softmax_forward(&self.data(), 1, n, temp);
        Ok(Tensor::from_op(
            vec![n],
            data,
            vec![self.clone()],
            Box::new(move |grad, out, parents| {
                parents[0].accumulate_grad(&softmax_backward(grad, out, 1, n, temp));
            }),
        ))
    }

    /// Row-wise stable softmax of a matrix (temperature 1).
    pub fn softmax_rows(&self) -> Result<Tensor<R>> {
        let (m, n) = dims2(self, "softmax_rows")?;
        let data = softmax_forward(&self.data(), m, n, R::one());
        Ok(Tensor::from_op(
            vec![m, n],
            data,
            vec![self.clone()],
            Box::new(move |grad, out, parents| {
                parents[0].accumulate_grad(&softmax_backward(grad, out, m, n, R::one()));
            }),
        ))
    }

    /// Row-wise layer normalization with learnable gain/shift.
    pub fn layer_norm(&self, gamma: &Tensor<R>, beta: &Tensor<R>) -> Result<Tensor<R>> {
        let (m, n) = dims2(self, "layer_norm")?;
        if !gamma.is_vector() || gamma.numel() != n || !beta.is_vector() || beta.numel() != n {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: self.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        let eps = c::<R>(LN_EPS);
        let inv_n = R::one() / c::<R>(n as f64);
        let a = self.data();
        let g = gamma.data();
        let b = beta.data();
        let mut out = vec![R::zero(); m * n];
        let mut xhat = vec![R::zero(); m * n];
        let mut inv_std = vec![R::zero(); m];
        for i in 0..m {
            let row = &a[i * n..(i + 1) * n];
            let mu = row.iter().fold(R::zero(), |acc, &x| acc + x) * inv_n;
            let var = row
                .iter()
                .fold(R::zero(), |acc, &x| acc + (x - mu) * (x - mu))
                * inv_n;
            let s = R::one() / (var + eps).sqrt();
            inv_std[i] = s;
            for j in 0..n {
                let xh = (row[j] - mu) * s;
                xhat[i * n + j] = xh;
                out[i * n + j] = g[j] * xh + b[j];
            }
        }
        drop(a);
        drop(g);
        drop(b);
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |grad, _, parents| {
                let g = parents[1].to_vec();
                let mut dx = vec![R::zero(); m * n];
                let mut dgamma = vec![R::zero(); n];
                let mut dbeta = vec![R::zero(); n];
                for i in 0..m {
                    let base = i * n;
                    let mut mean_h = R::zero();
                    let mut mean_hx = R::zero();
                    for j in 0..n {
                        let go = grad[base + j];
                        let xh = xhat[base + j];
                        dgamma[j] += go * xh;
                        dbeta[j] += go;
                        let h = go * g[j];
                        mean_h += h;
                        mean_hx += h * xh;
                    }
                    mean_h *= inv_n;
                    mean_hx *= inv_n;
                    for j in 0..n {
                        let h = grad[base + j] * g[j];
                        dx[base + j] = (h - mean_h - xhat[base + j] * mean_hx) * inv_std[i];
                    }
                }
                parents[0].accumulate_grad(&dx);
                parents[1].accumulate_grad(&dgamma);
                parents[2].accumulate_grad(&dbeta);
            }),
        ))
    }

    /// Unit-norm copy of a vector; errors below the norm floor so degenerate
    /// inputs surface instead of silently normalizing noise.
    pub fn l2_normalize(&self) -> Result<Tensor<R>> {
        if !self.is_vector() {
            return Err(Error::Dimension {
                op: "l2_normalize",
                lhs: self.shape().to_vec(),
                rhs: vec![],
            });
        }
        let norm = l2_norm(&self.data());
        if norm <= c::<R>(NORM_EPS) {
            return Err(Error::DegenerateInput(
                "l2_normalize input has norm below 1e-12".to_string(),
            ));
        }
        let data = self.data().iter().map(|&x| x / norm).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |grad, out, parents| {
                let dot = grad
                    .iter()
                    .zip(out)
                    .fold(R::zero(), |acc, (&g, &y)| acc + g * y);
                let dx: Vec<R> = grad
                    .iter()
                    .zip(out)
                    .map(|(&g, &y)| (g - y * dot) / norm)
                    .collect();
                parents[0].accumulate_grad(&dx);
            }),
        ))
    }

    /// Cosine similarity of two equal-length vectors, as a scalar tensor.
    pub fn cosine_sim(&self, other: &Tensor<R>) -> Result<Tensor<R>> {
        if !self.is_vector() || !other.is_vector() || self.numel() != other.numel() {
            return Err(Error::Dimension {
                op: "cosine_sim",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let na = l2_norm(&self.data());
        let nb = l2_norm(&other.data());
        let floor = c::<R>(NORM_EPS);
        if na <= floor || nb <= floor {
            return Err(Error::DegenerateInput(
                "cosine_sim input has norm below 1e-12".to_string(),
            ));
        }
        let dot = self
            .data()
            .iter()
            .zip(other.data().iter())
            .fold(R::zero(), |acc, (&x, &y)| acc + x * y);
        let s = dot / (na * nb);
        Ok(Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone(), other.clone()],
            Box::new(move |grad, out, parents| {
                let a = parents[0].to_vec();
                let b = parents[1].to_vec();
                let g = grad[0];
                let s = out[0];
                let da: Vec<R> = a
                    .iter()
                    .zip(&b)
                    .map(|(&x, &y)| g * (y / (na * nb) - s * x / (na * na)))
                    .collect();
                let db: Vec<R> = a
                    .iter()
                    .zip(&b)
                    .map(|(&x, &y)| g * (x / (na * nb) - s * y / (nb * nb)))
                    .collect();
                parents[0].accumulate_grad(&da);
                parents[1].accumulate_grad(&db);
            }),
        ))
    }

    /// Indices and values of the k largest entries, descending; ties broken
    /// by lower index. Not a graph operation.
    pub fn topk(&self, k: usize) -> Result<Vec<(usize, R)>> {
        if !self.is_vector() {
            return Err(Error::Dimension {
                op: "topk",
                lhs: self.shape().to_vec(),
                rhs: vec![],
            });
        }
        let n = self.numel();
        if k == 0 || k > n {
            return Err(Error::Parameter(format!(
                "topk k={k} out of range for length {n}"
            )));
        }
        let data = self.data();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_unstable_by(|&i, &j| {
            data[j]
                .partial_cmp(&data[i])
                .expect("finite values are totally ordered")
                .then(i.cmp(&j))
        });
        Ok(idx[..k].iter().map(|&i| (i, data[i])).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tensor;
    use crate::error::Error;

    type T = Tensor<f64>;

    fn t(shape: &[usize], data: &[f64]) -> T {
        T::new(shape, data.to_vec()).unwrap()
    }

    fn p(shape: &[usize], data: &[f64]) -> T {
        T::param(shape, data.to_vec()).unwrap()
    }

    fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
        assert_eq!(actual.len(), expected.len());
        for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
            assert!(
                (a - e).abs() <= tol,
                "index {i}: actual {a} vs expected {e}"
            );
        }
    }

    #[test]
    fn matmul_identity_preserves() {
        let a = t(&[2, 2], &[3.0, -1.0, 2.5, 7.0]);
        let i2 = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let out = i2.matmul(&a).unwrap();
        assert_close(&out.to_vec(), &a.to_vec(), 0.0);
    }

    #[test]
    fn matmul_analytic() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[0.0, 1.0]);
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.shape(), &[2, 1]);
        assert_close(&out.to_vec(), &[2.0, 4.0], 0.0);
    }

    #[test]
    fn matmul_shape_mismatch_names_both() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 2], &[0.0; 4]);
        match a.matmul(&b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn hadamard_identities_and_analytic() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let ones = T::ones(&[2, 2]);
        let zeros = T::zeros(&[2, 2]);
        assert_close(&a.hadamard(&ones).unwrap().to_vec(), &a.to_vec(), 0.0);
        assert_close(&a.hadamard(&zeros).unwrap().to_vec(), &[0.0; 4], 0.0);
        let b = t(&[2, 2], &[2.0, 0.0, 1.0, 3.0]);
        assert_close(
            &a.hadamard(&b).unwrap().to_vec(),
            &[2.0, 0.0, 3.0, 12.0],
            0.0,
        );
    }

    #[test]
    fn outer_basis_and_analytic() {
        let e1 = t(&[3], &[1.0, 0.0, 0.0]);
        let out = e1.outer(&e1).unwrap();
        assert_close(
            &out.to_vec(),
            &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            0.0,
        );
        let u = t(&[2], &[1.0, 2.0]);
        let v = t(&[3], &[3.0, 4.0, 5.0]);
        let uv = u.outer(&v).unwrap();
        assert_eq!(uv.shape(), &[2, 3]);
        assert_close(&uv.to_vec(), &[3.0, 4.0, 5.0, 6.0, 8.0, 10.0], 0.0);
    }

    #[test]
    fn outer_minors_vanish() {
        let u = t(&[3], &[0.3, -1.2, 2.2]);
        let v = t(&[4], &[1.5, 0.2, -0.7, 3.1]);
        let m = u.outer(&v).unwrap();
        let d = m.to_vec();
        for i0 in 0..3 {
            for i1 in (i0 + 1)..3 {
                for j0 in 0..4 {
                    for j1 in (j0 + 1)..4 {
                        let minor = d[i0 * 4 + j0] * d[i1 * 4 + j1] - d[i0 * 4 + j1] * d[i1 * 4 + j0];
                        assert!(minor.abs() <= 1e-12, "minor ({i0},{i1},{j0},{j1}) = {minor}");
                    }
                }
            }
        }
    }

    #[test]
    fn cosine_sim_basics() {
        let v = t(&[3], &[0.4, -1.0, 2.0]);
        assert!((v.cosine_sim(&v).unwrap().value() - 1.0).abs() <= 1e-12);
        let ex = t(&[2], &[1.0, 0.0]);
        let ey = t(&[2], &[0.0, 1.0]);
        assert!(ex.cosine_sim(&ey).unwrap().value().abs() <= 1e-12);
        let diag = t(&[2], &[1.0, 1.0]);
        let got = ex.cosine_sim(&diag).unwrap().value();
        assert!((got - std::f64::consts::FRAC_1_SQRT_2).abs() <= 1e-12);
    }

    #[test]
    fn cosine_sim_scale_invariant_and_degenerate() {
        let a = t(&[3], &[0.2, 0.5, -0.3]);
        let b = t(&[3], &[1.0, -2.0, 0.4]);
        let s1 = a.cosine_sim(&b).unwrap().value();
        let s2 = a.scale(7.5).cosine_sim(&b).unwrap().value();
        assert!((s1 - s2).abs() <= 1e-12);
        let z = T::zeros(&[3]);
        assert!(matches!(
            a.cosine_sim(&z),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn softmax_uniform_limit_and_reference() {
        let u = t(&[4], &[0.7, 0.7, 0.7, 0.7]);
        assert_close(&u.softmax(1.0).unwrap().to_vec(), &[0.25; 4], 1e-15);

        let gap = t(&[2], &[100.0, 0.0]);
        let out = gap.softmax(1.0).unwrap().to_vec();
        assert!(out[0] > 1.0 - 1e-12 && out[1] < 1e-12);

        let x = t(&[3], &[1.0, 2.0, 3.0]);
        let y = x.softmax(1.0).unwrap().to_vec();
        assert_close(&y, &[0.09003, 0.24473, 0.66524], 1e-5);
    }

    #[test]
    fn softmax_sums_to_one_and_shift_invariant() {
        let x = t(&[5], &[3.1, -0.4, 0.0, 7.7, 2.2]);
        let y = x.softmax(0.7).unwrap().to_vec();
        let sum: f64 = y.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
        let shifted = x.add_scalar(11.3).softmax(0.7).unwrap().to_vec();
        assert_close(&y, &shifted, 1e-12);
    }

    #[test]
    fn topk_order_ties_and_full_sort() {
        let x = t(&[3], &[3.0, 1.0, 2.0]);
        assert_eq!(x.topk(2).unwrap(), vec![(0, 3.0), (2, 2.0)]);
        let tie = t(&[3], &[5.0, 5.0, 1.0]);
        assert_eq!(tie.topk(2).unwrap(), vec![(0, 5.0), (1, 5.0)]);
        let full = t(&[4], &[0.5, 2.0, -1.0, 2.0]);
        assert_eq!(
            full.topk(4).unwrap(),
            vec![(1, 2.0), (3, 2.0), (0, 0.5), (2, -1.0)]
        );
        assert!(matches!(x.topk(0), Err(Error::Parameter(_))));
        assert!(matches!(x.topk(4), Err(Error::Parameter(_))));
    }

    #[test]
    fn backward_sum_gives_ones() {
        let a = p(&[2, 3], &[0.3, 1.0, -2.0, 0.1, 4.0, 2.5]);
        a.sum().backward().unwrap();
        assert_close(&a.grad().unwrap(), &[1.0; 6], 0.0);
    }

    #[test]
    fn backward_sum_of_square_gives_two_a() {
        let a = p(&[4], &[0.5, -1.5, 2.0, 3.0]);
        a.hadamard(&a).unwrap().sum().backward().unwrap();
        let expected: Vec<f64> = a.to_vec().iter().map(|x| 2.0 * x).collect();
        assert_close(&a.grad().unwrap(), &expected, 1e-15);
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let a = p(&[2], &[1.0, 2.0]);
        a.sum().backward().unwrap();
        a.sum().backward().unwrap();
        assert_close(&a.grad().unwrap(), &[2.0, 2.0], 0.0);
        a.zero_grad();
        assert!(a.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_and_untracked() {
        let a = p(&[2], &[1.0, 2.0]);
        assert!(matches!(a.scale(2.0).backward(), Err(Error::Contract(_))));
        let b = t(&[1], &[3.0]);
        assert!(matches!(b.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn sigmoid_log_exp_values() {
        let x = t(&[3], &[0.0, 50.0, -50.0]);
        let s = x.sigmoid().to_vec();
        assert!((s[0] - 0.5).abs() <= 1e-15);
        assert!(s[1] > 1.0 - 1e-15 && s[2] < 1e-15);

        let l = t(&[2], &[1.0, 0.0]).log().to_vec();
        assert!((l[0] - 0.0).abs() <= 1e-15);
        assert!((l[1] - (1e-12f64).ln()).abs() <= 1e-9);

        let e = t(&[2], &[0.0, 1.0]).exp().to_vec();
        assert_close(&e, &[1.0, std::f64::consts::E], 1e-15);
    }

    #[test]
    fn gelu_fixed_points() {
        let x = t(&[3], &[0.0, 10.0, -10.0]);
        let y = x.gelu().to_vec();
        assert!(y[0].abs() <= 1e-15);
        assert!((y[1] - 10.0).abs() <= 1e-9);
        assert!(y[2].abs() <= 1e-9);
    }

    #[test]
    fn relu_abs_min_max() {
        let a = t(&[4], &[-1.0, 0.0, 2.0, -3.0]);
        assert_close(&a.relu().to_vec(), &[0.0, 0.0, 2.0, 0.0], 0.0);
        assert_close(&a.abs().to_vec(), &[1.0, 0.0, 2.0, 3.0], 0.0);
        let b = t(&[4], &[0.0, 1.0, -5.0, -3.0]);
        assert_close(&a.minimum(&b).unwrap().to_vec(), &[-1.0, 0.0, -5.0, -3.0], 0.0);
        assert_close(&a.maximum(&b).unwrap().to_vec(), &[0.0, 1.0, 2.0, -3.0], 0.0);
    }

    #[test]
    fn div_values_and_guard() {
        let a = t(&[2], &[1.0, -6.0]);
        let b = t(&[2], &[4.0, 3.0]);
        assert_close(&a.div(&b).unwrap().to_vec(), &[0.25, -2.0], 0.0);
        let z = t(&[2], &[1.0, 0.0]);
        assert!(matches!(a.div(&z), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn structure_ops_roundtrip() {
        let m = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_close(
            &m.transpose().unwrap().to_vec(),
            &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0],
            0.0,
        );
        assert_close(&m.mean_rows().unwrap().to_vec(), &[2.5, 3.5, 4.5], 0.0);
        assert_close(&m.slice_cols(1, 3).unwrap().to_vec(), &[2.0, 3.0, 5.0, 6.0], 0.0);
        assert_close(&m.gather_rows(&[1, 0]).unwrap().to_vec(), &[4.0, 5.0, 6.0, 1.0, 2.0, 3.0], 0.0);
        assert!(matches!(m.gather_rows(&[2]), Err(Error::Parameter(_))));

        let top = t(&[1, 3], &[9.0, 9.0, 9.0]);
        let stacked = T::concat_rows(&[top.clone(), m.clone()]).unwrap();
        assert_eq!(stacked.shape(), &[3, 3]);
        assert_close(&stacked.to_vec()[..3], &[9.0, 9.0, 9.0], 0.0);

        let side = T::concat_cols(&[m.clone(), t(&[2, 1], &[7.0, 8.0])]).unwrap();
        assert_eq!(side.shape(), &[2, 4]);
        assert_close(&side.to_vec(), &[1.0, 2.0, 3.0, 7.0, 4.0, 5.0, 6.0, 8.0], 0.0);

        let v = t(&[3], &[10.0, 20.0, 30.0]);
        assert_close(
            &m.add_row(&v).unwrap().to_vec(),
            &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0],
            0.0,
        );
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let x = t(&[2, 4], &[1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0]);
        let gamma = T::ones(&[4]);
        let beta = T::zeros(&[4]);
        let y = x.layer_norm(&gamma, &beta).unwrap();
        let d = y.to_vec();
        for r in 0..2 {
            let row = &d[r * 4..(r + 1) * 4];
            let mu: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / 4.0;
            assert!(mu.abs() <= 1e-12);
            assert!((var - 1.0).abs() <= 1e-4, "variance {var}");
        }
    }

    #[test]
    fn l2_normalize_unit_norm_and_guard() {
        let v = t(&[3], &[3.0, 0.0, 4.0]);
        let u = v.l2_normalize().unwrap();
        assert_close(&u.to_vec(), &[0.6, 0.0, 0.8], 1e-15);
        assert!(matches!(
            T::zeros(&[3]).l2_normalize(),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn linear_vector_and_matrix() {
        let w = t(&[2, 3], &[1.0, 0.0, 2.0, 0.0, 1.0, -1.0]);
        let b = t(&[3], &[0.5, 0.5, 0.5]);
        let x = t(&[2], &[2.0, 3.0]);
        assert_close(&x.linear(&w, &b).unwrap().to_vec(), &[2.5, 3.5, 1.5], 0.0);
        let xm = t(&[2, 2], &[2.0, 3.0, 1.0, 0.0]);
        let y = xm.linear(&w, &b).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert_close(&y.to_vec(), &[2.5, 3.5, 1.5, 1.5, 0.5, 2.5], 0.0);
    }

    #[test]
    fn scale_by_and_div_by_track_scalar() {
        let a = p(&[2], &[3.0, -1.0]);
        let s = p(&[1], &[2.0]);
        let out = a.scale_by(&s).unwrap();
        assert_close(&out.to_vec(), &[6.0, -2.0], 0.0);
        out.sum().backward().unwrap();
        assert_close(&a.grad().unwrap(), &[2.0, 2.0], 0.0);
        assert_close(&s.grad().unwrap(), &[2.0], 0.0);

        let q = a.div_by(&s).unwrap();
        assert_close(&q.to_vec(), &[1.5, -0.5], 0.0);
    }

    #[test]
    fn softmax_rows_each_row_sums_to_one() {
        let m = t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        let y = m.softmax_rows().unwrap().to_vec();
        for r in 0..2 {
            let sum: f64 = y[r * 3..(r + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn untracked_graph_records_nothing() {
        let a = t(&[2], &[1.0, 2.0]);
        let out = a.scale(3.0);
        assert!(!out.is_tracked());
        let b = p(&[2], &[1.0, 2.0]);
        assert!(b.scale(3.0).is_tracked());
    }

    #[test]
    fn reshape_preserves_data_and_gradient() {
        let a = p(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let v = a.reshape(&[6]).unwrap();
        assert_eq!(v.shape(), &[6]);
        v.hadamard(&v).unwrap().sum().backward().unwrap();
        let expected: Vec<f64> = a.to_vec().iter().map(|x| 2.0 * x).collect();
        assert_close(&a.grad().unwrap(), &expected, 1e-15);
        assert!(matches!(a.reshape(&[5]), Err(Error::Dimension { .. })));
    }
}
