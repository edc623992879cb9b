use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_at, matmul_bt, transpose_into, Scalar, Tensor};

// 1/sqrt(2π)

/// Static geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.oh * self.ow
    }
}

fn as_matrix(shape: &[usize]) -> Option<(usize, usize)> {
    match *shape {
        [d] => Some((1, d)),
        [r, c] => Some((r, c)),
        _ => None,
    }
}

impl ConvGeom {
    /// Output columns `lo..hi` whose kernel column `kj` lands inside the input.
    fn valid_ox(&self, kj: usize) -> (usize, usize) {
        let lo = self.padding.saturating_sub(kj).div_ceil(self.stride);
        let limit = self.w + self.padding - kj; // ix < w  ⇔  ox·stride < w + pad − kj
        let hi = limit.div_ceil(self.stride).min(self.ow);
        (lo.min(hi), hi)
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.out_len();
    let mut cols = vec![T::zero(); g.patch_len() * p];
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    let (lo, hi) = g.valid_ox(kj);
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if g.stride == 1 {
                        let ix0 = lo + kj - g.padding;
                        out_row[lo..hi].copy_from_slice(&src_row[ix0..ix0 + hi - lo]);
                    } else {
                        for ox in lo..hi {
                            out_row[ox] = src_row[ox * g.stride + kj - g.padding];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.out_len();
    let mut dx = vec![T::zero(); g.cin * g.h * g.w];
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    let (lo, hi) = g.valid_ox(kj);
                    let src_row = &src[oy * g.ow..(oy + 1) * g.ow];
                    for ox in lo..hi {
                        dx[base + ox * g.stride + kj - g.padding] += src_row[ox];
                    }
                }
            }
        }
    }
    dx
}

/// Row-wise softmax over the last axis with max subtraction.
pub(crate) fn softmax_rows<T: Scalar>(data: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for (row, dst) in data.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (d, &x) in dst.iter_mut().zip(row) {
            *d = (x - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    out
}

/// Textbook `exp(x)/Σexp(x)` without the max shift; overflows on large logits.
fn naive_softmax_rows<T: Scalar>(data: &[T], n: usize) -> Vec<T> {
    let mut out: Vec<T> = data.iter().map(|x| x.exp()).collect();
    for row in out.chunks_exact_mut(n) {
        let sum = row.iter().fold(T::zero(), |a, &b| a + b);
        row.iter_mut().for_each(|d| *d /= sum);
    }
    out
}

/// Window `[floor(i·L/N), ceil((i+1)·L/N))` of adaptive pooling.
pub(crate) fn adaptive_window(i: usize, len: usize, out_len: usize) -> (usize, usize) {
    let start = i * len / out_len;
    let end = ((i + 1) * len).div_ceil(out_len);
    (start, end)
}

impl<T: Scalar> Graph<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        as_matrix(self.shape(v)).ok_or_else(|| Error::dim(op, format!("expected a matrix, got {:?}", self.shape(v))))
    }

    fn zip_map(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let av = self.value(a);
        let data = av.data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape(), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = T::from_f64(factor);
        let xv = self.value(x);
        let value = Tensor::new(xv.shape(), xv.data().iter().map(|&v| v * f).collect()).expect("same shape");
        self.push(value, Op::Scale(x, f), &[x])
    }

    /// Adds a bias vector `[n]` to every row of `x` (`[..., n]`).
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(x).last().expect("non-empty shape");
        if self.shape(bias) != [n] {
            return Err(Error::dim("add_row_bias", format!("x {:?}, bias {:?}", self.shape(x), self.shape(bias))));
        }
        let b = self.value(bias).data().to_vec();
        let xv = self.value(x);
        let mut data = xv.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            for (v, &bj) in row.iter_mut().zip(&b) {
                *v += bj;
            }
        }
        let value = Tensor::new(xv.shape(), data)?;
        Ok(self.push(value, Op::AddRowBias { x, bias }, &[x, bias]))
    }

    /// Adds `bias[c]` to every element of channel `c` of a `C×...` tensor.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.shape(x)[0];
        if self.shape(bias) != [c] {
            return Err(Error::dim(
                "add_channel_bias",
                format!("x {:?}, bias {:?}", self.shape(x), self.shape(bias)),
            ));
        }
        let b = self.value(bias).data().to_vec();
        let xv = self.value(x);
        let per = xv.len() / c;
        let mut data = xv.data().to_vec();
        for (chunk, &bc) in data.chunks_exact_mut(per).zip(&b) {
            for v in chunk {
                *v += bc;
            }
        }
        let value = Tensor::new(xv.shape(), data)?;
        Ok(self.push(value, Op::AddChannelBias { x, bias }, &[x, bias]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            _ => return Err(Error::dim("matmul", format!("cannot multiply {sa:?} by {sb:?}"))),
        };
        let data = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(&[m, n], data)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose2()?;
        Ok(self.push(value, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = *xv.shape().last().expect("non-empty shape");
        let rows = if self.naive_softmax { naive_softmax_rows(xv.data(), n) } else { softmax_rows(xv.data(), n) };
        let value = Tensor::new(xv.shape(), rows).expect("same shape");
        self.push(value, Op::Softmax(x), &[x])
    }

    /// Per-row normalization over the last axis with biased variance, then `gamma·x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = *self.shape(x).last().expect("non-empty shape");
        if d < 2 {
            return Err(Error::dim("layer_norm", format!("normalized extent must be >= 2, got {d}")));
        }
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim(
                "layer_norm",
                format!("x {:?}, gamma {:?}, beta {:?}", self.shape(x), self.shape(gamma), self.shape(beta)),
            ));
        }
        let eps = T::from_f64(eps);
        let inv_d = T::one() / T::from_usize(d);
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let xv = self.value(x);
        let rows = xv.len() / d;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = gv[j] * h + bv[j];
            }
        }
        let value = Tensor::new(xv.shape(), out)?;
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta]))
    }

    /// Layer norm across the leading (channel) axis of `x: C×…`, independently
    /// at every position. Equals transposing to `positions×C`, applying
    /// [`Self::layer_norm`] and transposing back, without the copies.
    pub fn layer_norm_channels(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let c = self.shape(x).first().copied().unwrap_or(0);
        if c < 2 || self.shape(x).len() < 2 {
            return Err(Error::dim("layer_norm_channels", format!("need C×… with C >= 2, got {:?}", self.shape(x))));
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dim(
                "layer_norm_channels",
                format!("x {:?}, gamma {:?}, beta {:?}", self.shape(x), self.shape(gamma), self.shape(beta)),
            ));
        }
        let eps = T::from_f64(eps);
        let inv_c = T::one() / T::from_usize(c);
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let xv = self.value(x);
        let p = xv.len() / c;
        let mut mean = vec![T::zero(); p];
        for ch in xv.data().chunks_exact(p) {
            for (m, &v) in mean.iter_mut().zip(ch) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_c);
        let mut var = vec![T::zero(); p];
        for ch in xv.data().chunks_exact(p) {
            for ((s, &v), &m) in var.iter_mut().zip(ch).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let rstd: Vec<T> = var.iter().map(|&s| T::one() / (s * inv_c + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for (k, ((ch, hc), oc)) in xv.data().chunks_exact(p).zip(xhat.chunks_exact_mut(p)).zip(out.chunks_exact_mut(p)).enumerate() {
            for i in 0..p {
                let h = (ch[i] - mean[i]) * rstd[i];
                hc[i] = h;
                oc[i] = gv[k] * h + bv[k];
            }
        }
        let value = Tensor::new(xv.shape(), out)?;
        Ok(self.push(value, Op::LayerNormChannels { x, gamma, beta, xhat, rstd }, &[x, gamma, beta]))
    }

    /// `x·Φ(x)` with the exact normal CDF.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let keep = self.requires_grad(x);
        let mut data = Vec::with_capacity(xv.len());
        let mut slope = Vec::with_capacity(if keep { xv.len() } else { 0 });
        for &v in xv.data() {
            let cdf = v.normal_cdf();
            data.push(v * cdf);
            if keep {
                slope.push(cdf + v * v.normal_pdf());
            }
        }
        let value = Tensor::new(xv.shape(), data).expect("same shape");
        self.push(value, Op::Gelu { x, slope }, &[x])
    }

    /// Cross-correlation of `x: Cin×H×W` with `w: Cout×Cin×kh×kw`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        let (cin, h, wd, cout, kh, kw) = match (sx, sw) {
            (&[cin, h, wd], &[cout, cin2, kh, kw]) if cin == cin2 => (cin, h, wd, cout, kh, kw),
            _ => return Err(Error::dim("conv2d", format!("input {sx:?} incompatible with kernel {sw:?}"))),
        };
        if stride == 0 {
            return Err(Error::dim("conv2d", "stride must be positive"));
        }
        if kh > h + 2 * padding || kw > wd + 2 * padding {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {kh}×{kw} larger than padded input {}×{}", h + 2 * padding, wd + 2 * padding),
            ));
        }
        let geom = ConvGeom {
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            stride,
            padding,
            oh: (h + 2 * padding - kh) / stride + 1,
            ow: (wd + 2 * padding - kw) / stride + 1,
        };
        let cols = im2col(self.value(x).data(), &geom);
        let data = matmul(self.value(w).data(), &cols, cout, geom.patch_len(), geom.out_len());
        let value = Tensor::new(&[cout, geom.oh, geom.ow], data)?;
        Ok(self.push(value, Op::Conv2d { x, w, cols, geom }, &[x, w]))
    }

    /// Non-overlapping `k×k` max pooling of a `C×H×W` tensor; ties route to the first maximum.
    pub fn max_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let (c, h, w) = match *self.shape(x) {
            [c, h, w] => (c, h, w),
            ref s => return Err(Error::dim("max_pool2d", format!("expected C×H×W, got {s:?}"))),
        };
        if k == 0 || h < k || w < k {
            return Err(Error::dim("max_pool2d", format!("window {k} does not fit {h}×{w}")));
        }
        let (oh, ow) = (h / k, w / k);
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); c * oh * ow];
        let mut argmax = vec![0usize; c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_ix = usize::MAX;
                    for dy in 0..k {
                        for dx in 0..k {
                            let ix = (ch * h + oy * k + dy) * w + ox * k + dx;
                            if best_ix == usize::MAX || xd[ix] > best {
                                best = xd[ix];
                                best_ix = ix;
                            }
                        }
                    }
                    let o = (ch * oh + oy) * ow + ox;
                    out[o] = best;
                    argmax[o] = best_ix;
                }
            }
        }
        let value = Tensor::new(&[c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool2d { x, argmax }, &[x]))
    }

    /// Maps `L×d` tokens to `N×d` by averaging adaptive windows. Requires `1 ≤ N ≤ L`.
    pub fn adaptive_avg_pool_tokens(&mut self, x: Var, out_len: usize) -> Result<Var> {
        let (len, d) = self.matrix("adaptive_avg_pool_tokens", x)?;
        if out_len == 0 || out_len > len {
            return Err(Error::dim(
                "adaptive_avg_pool_tokens",
                format!("cannot pool {len} tokens to {out_len}; up-sampling needs a linear projection"),
            ));
        }
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); out_len * d];
        for i in 0..out_len {
            let (s, e) = adaptive_window(i, len, out_len);
            let inv = T::one() / T::from_usize(e - s);
            let dst = &mut out[i * d..(i + 1) * d];
            for r in s..e {
                for (o, &v) in dst.iter_mut().zip(&xd[r * d..(r + 1) * d]) {
                    *o += v;
                }
            }
            for o in dst.iter_mut() {
                *o *= inv;
            }
        }
        let value = Tensor::new(&[out_len, d], out)?;
        Ok(self.push(value, Op::AdaptiveAvgPool { x }, &[x]))
    }

    /// Elementwise max over the token axis of `N×d`, giving `[d]`.
    pub fn max_pool_tokens(&mut self, x: Var) -> Result<Var> {
        let (n, d) = match *self.shape(x) {
            [n, d] if n > 0 => (n, d),
            ref s => return Err(Error::dim("max_pool_tokens", format!("expected non-empty N×d, got {s:?}"))),
        };
        let xd = self.value(x).data();
        let mut out = xd[..d].to_vec();
        let mut argmax: Vec<usize> = (0..d).collect();
        for r in 1..n {
            for j in 0..d {
                let v = xd[r * d + j];
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = r * d + j;
                }
            }
        }
        let value = Tensor::new(&[d], out)?;
        Ok(self.push(value, Op::MaxPoolTokens { x, argmax }, &[x]))
    }

    /// Mean over the token axis of `N×d`, giving `[d]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.matrix("mean_rows", x)?;
        let xd = self.value(x).data();
        let inv = T::one() / T::from_usize(n);
        let mut out = vec![T::zero(); d];
        for row in xd.chunks_exact(d) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o *= inv;
        }
        let value = Tensor::new(&[d], out)?;
        Ok(self.push(value, Op::MeanRows(x), &[x]))
    }

    /// Stacks matrices (or `[d]` vectors as single rows) vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat_rows", "no inputs"));
        }
        let (_, d) = self.matrix("concat_rows", parts[0])?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.matrix("concat_rows", p)?;
            if c != d {
                return Err(Error::dim("concat_rows", format!("width {c} vs {d}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(&[rows, d], data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Joins matrices side by side; `[d]` vectors stay vectors.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat_cols", "no inputs"));
        }
        let vectors = self.shape(parts[0]).len() == 1;
        let (rows, _) = self.matrix("concat_cols", parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix("concat_cols", p)?;
            if r != rows || (self.shape(p).len() == 1) != vectors {
                return Err(Error::dim("concat_cols", format!("{:?} vs {:?}", self.shape(parts[0]), self.shape(p))));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &c) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * c..(r + 1) * c]);
            }
        }
        let shape: Vec<usize> = if vectors { vec![total] } else { vec![rows, total] };
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.matrix("slice_rows", x)?;
        if len == 0 || start + len > r {
            return Err(Error::dim("slice_rows", format!("rows {start}..{} of {r}", start + len)));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let value = Tensor::new(&[len, c], data)?;
        Ok(self.push(value, Op::SliceRows { x, start }, &[x]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.matrix("slice_cols", x)?;
        if len == 0 || start + len > c {
            return Err(Error::dim("slice_cols", format!("cols {start}..{} of {c}", start + len)));
        }
        let xd = self.value(x).data();
        let mut data = Vec::with_capacity(r * len);
        for row in xd.chunks_exact(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let shape: Vec<usize> = if self.shape(x).len() == 1 { vec![len] } else { vec![r, len] };
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::SliceCols { x, start }, &[x]))
    }

    /// Mean binary cross-entropy over all logits, in the stable softplus form.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.len() != labels.len() {
            return Err(Error::dim("bce_with_logits", format!("{} logits, {} labels", lv.len(), labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::Validation { field: "label", detail: format!("{bad} is not in {{0, 1}}") });
        }
        let mut total = 0.0f64;
        for (&z, &y) in lv.data().iter().zip(labels) {
            let u = -(2.0 * y - 1.0) * z.as_f64();
            total += u.max(0.0) + (-u.abs()).exp().ln_1p();
        }
        let value = Tensor::scalar(T::from_f64(total / labels.len() as f64));
        let labels = labels.iter().map(|&y| T::from_f64(y)).collect();
        Ok(self.push(value, Op::BceWithLogits { logits, labels }, &[logits]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    // ── Vector-Jacobian products ────────────────────────────────────

    pub(super) fn vjp(&self, i: usize, gy: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                out.push((*a, gy.to_vec()));
                out.push((*b, gy.to_vec()));
            }
            Op::Sub(a, b) => {
                out.push((*a, gy.to_vec()));
                out.push((*b, gy.iter().map(|&g| -g).collect()));
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    out.push((*a, gy.iter().zip(val(*b)).map(|(&g, &y)| g * y).collect()));
                }
                if rg(*b) {
                    out.push((*b, gy.iter().zip(val(*a)).map(|(&g, &x)| g * x).collect()));
                }
            }
            Op::Scale(x, f) => out.push((*x, gy.iter().map(|&g| g * *f).collect())),
            Op::AddRowBias { x, bias } => {
                out.push((*x, gy.to_vec()));
                if rg(*bias) {
                    let n = val(*bias).len();
                    let mut gb = vec![T::zero(); n];
                    for row in gy.chunks_exact(n) {
                        for (b, &g) in gb.iter_mut().zip(row) {
                            *b += g;
                        }
                    }
                    out.push((*bias, gb));
                }
            }
            Op::AddChannelBias { x, bias } => {
                out.push((*x, gy.to_vec()));
                if rg(*bias) {
                    let c = val(*bias).len();
                    let per = gy.len() / c;
                    out.push((*bias, gy.chunks_exact(per).map(|ch| ch.iter().copied().sum()).collect()));
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2().expect("matrix");
                let n = self.nodes[b.0].value.shape()[1];
                if rg(*a) {
                    out.push((*a, matmul_bt(gy, val(*b), m, n, k)));
                }
                if rg(*b) {
                    out.push((*b, matmul_at(val(*a), gy, m, k, n)));
                }
            }
            Op::Transpose(x) => {
                let (r, c) = self.nodes[x.0].value.dims2().expect("matrix");
                let mut g = vec![T::zero(); r * c];
                transpose_into(gy, c, r, &mut g);
                out.push((*x, g));
            }
            Op::Reshape(x) => out.push((*x, gy.to_vec())),
            Op::Softmax(x) => {
                let s = node.value.data();
                let n = *node.value.shape().last().expect("shape");
                let mut g = vec![T::zero(); s.len()];
                for ((srow, grow), dst) in s.chunks_exact(n).zip(gy.chunks_exact(n)).zip(g.chunks_exact_mut(n)) {
                    let dot: T = srow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                    for ((d, &sv), &gv) in dst.iter_mut().zip(srow).zip(grow) {
                        *d = sv * (gv - dot);
                    }
                }
                out.push((*x, g));
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gam = val(*gamma);
                let d = gam.len();
                if rg(*x) {
                    let inv_d = T::one() / T::from_usize(d);
                    let mut gx = vec![T::zero(); gy.len()];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let g_row = &gy[r * d..(r + 1) * d];
                        let h_row = &xhat[r * d..(r + 1) * d];
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..d {
                            let dh = g_row[j] * gam[j];
                            sum_dh += dh;
                            sum_dh_h += dh * h_row[j];
                        }
                        for j in 0..d {
                            let dh = g_row[j] * gam[j];
                            gx[r * d + j] = rs * (dh - inv_d * sum_dh - h_row[j] * inv_d * sum_dh_h);
                        }
                    }
                    out.push((*x, gx));
                }
                if rg(*gamma) {
                    let mut gg = vec![T::zero(); d];
                    for (grow, hrow) in gy.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for ((a, &g), &h) in gg.iter_mut().zip(grow).zip(hrow) {
                            *a += g * h;
                        }
                    }
                    out.push((*gamma, gg));
                }
                if rg(*beta) {
                    let mut gb = vec![T::zero(); d];
                    for grow in gy.chunks_exact(d) {
                        for (a, &g) in gb.iter_mut().zip(grow) {
                            *a += g;
                        }
                    }
                    out.push((*beta, gb));
                }
            }
            Op::LayerNormChannels { x, gamma, beta, xhat, rstd } => {
                let gam = val(*gamma);
                let (c, p) = (gam.len(), rstd.len());
                if rg(*x) {
                    let inv_c = T::one() / T::from_usize(c);
                    let (mut sum_dh, mut sum_dh_h) = (vec![T::zero(); p], vec![T::zero(); p]);
                    for (k, (gc, hc)) in gy.chunks_exact(p).zip(xhat.chunks_exact(p)).enumerate() {
                        for i in 0..p {
                            let dh = gc[i] * gam[k];
                            sum_dh[i] += dh;
                            sum_dh_h[i] += dh * hc[i];
                        }
                    }
                    let mut gx = vec![T::zero(); gy.len()];
                    for (k, ((gc, hc), dst)) in gy.chunks_exact(p).zip(xhat.chunks_exact(p)).zip(gx.chunks_exact_mut(p)).enumerate() {
                        for i in 0..p {
                            let dh = gc[i] * gam[k];
                            dst[i] = rstd[i] * (dh - inv_c * sum_dh[i] - hc[i] * inv_c * sum_dh_h[i]);
                        }
                    }
                    out.push((*x, gx));
                }
                if rg(*gamma) {
                    let gg = gy.chunks_exact(p).zip(xhat.chunks_exact(p)).map(|(gc, hc)| gc.iter().zip(hc).map(|(&g, &h)| g * h).sum()).collect();
                    out.push((*gamma, gg));
                }
                if rg(*beta) {
                    out.push((*beta, gy.chunks_exact(p).map(|gc| gc.iter().copied().sum()).collect()));
                }
            }
            Op::Gelu { x, slope } => {
                out.push((*x, slope.iter().zip(gy).map(|(&s, &g)| g * s).collect()));
            }
            Op::Conv2d { x, w, cols, geom } => {
                let (k, p) = (geom.patch_len(), geom.out_len());
                if rg(*w) {
                    out.push((*w, matmul_bt(gy, cols, geom.cout, p, k)));
                }
                if rg(*x) {
                    let dcols = matmul_at(val(*w), gy, geom.cout, k, p);
                    out.push((*x, col2im(&dcols, geom)));
                }
            }
            Op::MaxPool2d { x, argmax } | Op::MaxPoolTokens { x, argmax } => {
                let mut g = vec![T::zero(); self.nodes[x.0].value.len()];
                for (&ix, &gv) in argmax.iter().zip(gy) {
                    g[ix] += gv;
                }
                out.push((*x, g));
            }
            Op::AdaptiveAvgPool { x } => {
                let (len, d) = self.nodes[x.0].value.dims2().expect("matrix");
                let n = gy.len() / d;
                let mut g = vec![T::zero(); len * d];
                for i in 0..n {
                    let (s, e) = adaptive_window(i, len, n);
                    let inv = T::one() / T::from_usize(e - s);
                    for r in s..e {
                        for j in 0..d {
                            g[r * d + j] += gy[i * d + j] * inv;
                        }
                    }
                }
                out.push((*x, g));
            }
            Op::MeanRows(x) => {
                let xv = &self.nodes[x.0].value;
                let d = gy.len();
                let n = xv.len() / d;
                let inv = T::one() / T::from_usize(n);
                let row: Vec<T> = gy.iter().map(|&g| g * inv).collect();
                out.push((*x, row.iter().copied().cycle().take(n * d).collect()));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    if rg(*p) {
                        out.push((*p, gy[offset..offset + len].to_vec()));
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let widths: Vec<usize> =
                    parts.iter().map(|p| as_matrix(self.nodes[p.0].value.shape()).expect("matrix").1).collect();
                let total: usize = widths.iter().sum();
                let rows = gy.len() / total;
                let mut offset = 0;
                for (p, &c) in parts.iter().zip(&widths) {
                    if rg(*p) {
                        let mut g = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            g.extend_from_slice(&gy[r * total + offset..r * total + offset + c]);
                        }
                        out.push((*p, g));
                    }
                    offset += c;
                }
            }
            Op::SliceRows { x, start } => {
                let xv = &self.nodes[x.0].value;
                let c = as_matrix(xv.shape()).expect("matrix").1;
                let mut g = vec![T::zero(); xv.len()];
                g[start * c..start * c + gy.len()].copy_from_slice(gy);
                out.push((*x, g));
            }
            Op::SliceCols { x, start } => {
                let xv = &self.nodes[x.0].value;
                let (r, c) = as_matrix(xv.shape()).expect("matrix");
                let len = gy.len() / r;
                let mut g = vec![T::zero(); xv.len()];
                for row in 0..r {
                    g[row * c + start..row * c + start + len].copy_from_slice(&gy[row * len..(row + 1) * len]);
                }
                out.push((*x, g));
            }
            Op::BceWithLogits { logits, labels } => {
                let scale = gy[0] / T::from_usize(labels.len());
                let g = val(*logits)
                    .iter()
                    .zip(labels)
                    .map(|(&z, &y)| {
                        let s = T::one() / (T::one() + (-z).exp());
                        (s - y) * scale
                    })
                    .collect();
                out.push((*logits, g));
            }
            Op::Sum(x) => out.push((*x, vec![gy[0]; self.nodes[x.0].value.len()])),
        }
        out
    }
}
