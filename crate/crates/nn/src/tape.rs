//! Recording tape and differentiable operations.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward pass. Variables are indices into the tape, so a tape
//! is built fresh for every forward pass.

use rand::Rng;

use crate::gemm::gemm;
use crate::{NnError, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Named trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> Result<usize> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(NnError::Config(format!("duplicate parameter name {name:?}")));
        }
        self.names.push(name);
        self.tensors.push(t);
        Ok(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    /// Output keeps the input's spatial size (stride 1 only).
    Same,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    f: usize,
    sh: usize,
    sw: usize,
    pad_top: usize,
    pad_left: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.kh * self.kw * self.c
    }

    fn rows(&self) -> usize {
        self.batch * self.oh * self.ow
    }

    /// Calls `visit(input_offset, column_offset)` for every tap inside the image.
    fn for_each_tap(&self, mut visit: impl FnMut(usize, usize)) {
        let patch = self.patch();
        for b in 0..self.batch {
            for oy in 0..self.oh {
                for ox in 0..self.ow {
                    let row = (b * self.oh + oy) * self.ow + ox;
                    for ky in 0..self.kh {
                        let iy = (oy * self.sh + ky) as isize - self.pad_top as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for kx in 0..self.kw {
                            let ix = (ox * self.sw + kx) as isize - self.pad_left as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let src = ((b * self.h + iy as usize) * self.w + ix as usize) * self.c;
                            let dst = row * patch + (ky * self.kw + kx) * self.c;
                            visit(src, dst);
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    /// `a + b` with `b` broadcast over the leading axes of `a`.
    Add(Var, Var),
    Sub(Var, Var),
    /// `a ∘ b` with `b` broadcast over the leading axes of `a`.
    Mul(Var, Var),
    Scale(Var, f64),
    /// `x · w + b` over the last axis of `x`.
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Reshape(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Gather { x: Var, axis: usize, indices: Vec<usize> },
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom, cols: Vec<f64> },
    MaxPool { x: Var, argmax: Vec<usize> },
    Dropout { x: Var, mask: Vec<f64> },
    /// `y[:, targets[e]] += weight[e] · x[:, e]`, plus bias.
    Scatter { x: Var, weight: Var, bias: Var, targets: Vec<usize> },
    Mse { pred: Var, target: Vec<f64> },
    SumSquares(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Variables for one ConvLSTM cell.
#[derive(Debug, Clone, Copy)]
pub struct ConvLstmParams {
    /// Kernel `(kh, kw, cin + f, 4f)` over `[x, h]`, gate blocks in order i, f, c, o.
    pub kernel: Var,
    /// Bias `(4f)`.
    pub bias: Var,
    /// Peephole weights `(a, b, f)`.
    pub w_ci: Var,
    pub w_cf: Var,
    pub w_co: Var,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Vec<f64>>>,
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.grads = None;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A constant input; gradients flow into it but no parameter is updated.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: usize) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    fn bcast_check(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(NnError::Shape(format!("{what}: {sb:?} does not broadcast onto {sa:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bcast_check(a, b, "add")?;
        let bv = self.value(b).data();
        let n = bv.len().max(1);
        let data: Vec<f64> = self.value(a).data().iter().enumerate().map(|(i, x)| x + bv[i % n]).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(&shape, data)?, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(NnError::Shape(format!("sub: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data: Vec<f64> = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(&shape, data)?, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bcast_check(a, b, "mul")?;
        let bv = self.value(b).data();
        let n = bv.len().max(1);
        let data: Vec<f64> = self.value(a).data().iter().enumerate().map(|(i, x)| x * bv[i % n]).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(&shape, data)?, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|v| v * k).collect()).expect("same shape");
        self.push(out, Op::Scale(x, k))
    }

    /// Dense map over the last axis: `x (…, in) · w (in, out) + b (out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let Some(&inner) = xs.last() else {
            return Err(NnError::Shape("linear on a scalar".into()));
        };
        if ws.len() != 2 || ws[0] != inner || self.shape(b) != [ws[1]] {
            return Err(NnError::Shape(format!(
                "linear: input {xs:?}, weight {ws:?}, bias {:?}",
                self.shape(b)
            )));
        }
        let rows = xs.iter().product::<usize>() / inner.max(1);
        let out_dim = ws[1];
        let mut data = Vec::with_capacity(rows * out_dim);
        for _ in 0..rows {
            data.extend_from_slice(self.value(b).data());
        }
        gemm(rows, inner, out_dim, self.value(x).data(), false, self.value(w).data(), false, 1.0, &mut data);
        let mut shape = xs;
        *shape.last_mut().unwrap() = out_dim;
        Ok(self.push(Tensor::new(&shape, data)?, Op::Linear { x, w, b }))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape");
        self.push(out, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(NnError::Shape("concat of nothing".into()));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(NnError::Shape(format!("concat axis {axis} on rank {}", base.len())));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len() || (0..s.len()).any(|d| d != axis && s[d] != base[d]) {
                return Err(NnError::Shape(format!("concat: {s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let n = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * n..(o + 1) * n]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(Tensor::new(&shape, data)?, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || start + len > xs[axis] {
            return Err(NnError::Shape(format!("slice {start}..{} of axis {axis} in {xs:?}", start + len)));
        }
        let (outer, mid, inner) = split_axis(&xs, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let a = (o * mid + start) * inner;
            data.extend_from_slice(&src[a..a + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        Ok(self.push(Tensor::new(&shape, data)?, Op::Slice { x, axis, start }))
    }

    /// Selects `indices` along `axis`; repeated indices are allowed.
    pub fn gather(&mut self, x: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || indices.iter().any(|&i| i >= xs[axis]) {
            return Err(NnError::Shape(format!("gather {indices:?} on axis {axis} of {xs:?}")));
        }
        let (outer, mid, inner) = split_axis(&xs, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let a = (o * mid + i) * inner;
                data.extend_from_slice(&src[a..a + inner]);
            }
        }
        let mut shape = xs;
        shape[axis] = indices.len();
        let op = Op::Gather { x, axis, indices: indices.to_vec() };
        Ok(self.push(Tensor::new(&shape, data)?, op))
    }

    /// 2-D cross-correlation of `x (batch, h, w, c)` with `w (kh, kw, c, f)`, plus bias `(f)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, strides: (usize, usize), padding: Padding) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[2] != xs[3] || self.shape(b) != [ws[3]] {
            return Err(NnError::Shape(format!(
                "conv2d: input {xs:?}, kernel {ws:?}, bias {:?}",
                self.shape(b)
            )));
        }
        let (sh, sw) = strides;
        if sh == 0 || sw == 0 {
            return Err(NnError::Config("conv2d strides must be positive".into()));
        }
        let (pad_top, pad_left, oh, ow) = match padding {
            Padding::Valid => {
                if ws[0] > xs[1] || ws[1] > xs[2] {
                    return Err(NnError::Shape(format!("kernel {ws:?} larger than input {xs:?}")));
                }
                (0, 0, (xs[1] - ws[0]) / sh + 1, (xs[2] - ws[1]) / sw + 1)
            }
            Padding::Same => {
                if (sh, sw) != (1, 1) {
                    return Err(NnError::Config("same padding requires unit strides".into()));
                }
                ((ws[0] - 1) / 2, (ws[1] - 1) / 2, xs[1], xs[2])
            }
        };
        let geom = ConvGeom {
            batch: xs[0],
            h: xs[1],
            w: xs[2],
            c: xs[3],
            kh: ws[0],
            kw: ws[1],
            f: ws[3],
            sh,
            sw,
            pad_top,
            pad_left,
            oh,
            ow,
        };
        let mut cols = vec![0.0; geom.rows() * geom.patch()];
        let src = self.value(x).data();
        geom.for_each_tap(|s, d| cols[d..d + geom.c].copy_from_slice(&src[s..s + geom.c]));
        let mut data = Vec::with_capacity(geom.rows() * geom.f);
        for _ in 0..geom.rows() {
            data.extend_from_slice(self.value(b).data());
        }
        gemm(geom.rows(), geom.patch(), geom.f, &cols, false, self.value(w).data(), false, 1.0, &mut data);
        let out = Tensor::new(&[geom.batch, oh, ow, geom.f], data)?;
        Ok(self.push(out, Op::Conv2d { x, w, b, geom, cols }))
    }

    /// Non-overlapping max-pool over the two spatial axes of `(batch, h, w, c)`.
    /// Ties go to the first position in row-major window order.
    pub fn maxpool(&mut self, x: Var, window: (usize, usize)) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (ph, pw) = window;
        if xs.len() != 4 || ph == 0 || pw == 0 || xs[1] % ph != 0 || xs[2] % pw != 0 {
            return Err(NnError::Shape(format!("max-pool window {window:?} does not tile {xs:?}")));
        }
        let (b, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = (h / ph, w / pw);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(b * oh * ow * c);
        let mut argmax = Vec::with_capacity(data.capacity());
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = usize::MAX;
                        for dy in 0..ph {
                            for dx in 0..pw {
                                let idx = ((bi * h + oy * ph + dy) * w + ox * pw + dx) * c + ch;
                                if best == usize::MAX || src[idx] > src[best] {
                                    best = idx;
                                }
                            }
                        }
                        data.push(src[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        let out = Tensor::new(&[b, oh, ow, c], data)?;
        Ok(self.push(out, Op::MaxPool { x, argmax }))
    }

    /// Inverted dropout: zero with probability `rate`, scale survivors by `1/(1 − rate)`.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rate > 0.0 && rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.dropout_with_mask(x, mask)
    }

    /// Dropout with a caller-supplied multiplicative mask.
    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(NnError::Shape("dropout mask length".into()));
        }
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().zip(&mask).map(|(v, m)| v * m).collect())?;
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    /// Sparse linear combination: `y[:, targets[e]] += weight[e] · x[:, e]`, plus `bias`.
    /// `x` is `(batch, e)`, `weight` is `(e)`, `bias` is `(o)`.
    pub fn scatter(&mut self, x: Var, weight: Var, bias: Var, targets: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let o = self.shape(bias).iter().product::<usize>();
        if xs.len() != 2 || xs[1] != targets.len() || self.value(weight).len() != targets.len() {
            return Err(NnError::Shape(format!(
                "scatter: input {xs:?}, {} weights, {} targets",
                self.value(weight).len(),
                targets.len()
            )));
        }
        if targets.iter().any(|&t| t >= o) {
            return Err(NnError::Shape("scatter target out of range".into()));
        }
        let (xv, wv, bv) = (self.value(x).data(), self.value(weight).data(), self.value(bias).data());
        let mut data = Vec::with_capacity(xs[0] * o);
        for r in 0..xs[0] {
            data.extend_from_slice(bv);
            let row = &mut data[r * o..];
            for (e, &t) in targets.iter().enumerate() {
                row[t] += wv[e] * xv[r * xs[1] + e];
            }
        }
        let out = Tensor::new(&[xs[0], o], data)?;
        Ok(self.push(out, Op::Scatter { x, weight, bias, targets: targets.to_vec() }))
    }

    /// Mean squared error against a constant target of the same size.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() || p.is_empty() {
            return Err(NnError::Shape(format!("mse: {} predictions, {} targets", p.len(), target.len())));
        }
        let v = p.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64;
        Ok(self.push(Tensor::scalar(v), Op::Mse { pred, target: target.to_vec() }))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let v = self.value(x).data().iter().map(|a| a * a).sum();
        self.push(Tensor::scalar(v), Op::SumSquares(x))
    }

    /// One ConvLSTM step over `x (batch, a, b, cin)` with state `h, c (batch, a, b, f)`:
    ///
    /// ```text
    /// i = σ(W_xi∗x + W_hi∗h + W_ci∘c + b_i)
    /// f = σ(W_xf∗x + W_hf∗h + W_cf∘c + b_f)
    /// c' = f∘c + i∘tanh(W_xc∗x + W_hc∗h + b_c)
    /// o = σ(W_xo∗x + W_ho∗h + W_co∘c' + b_o)
    /// h' = o∘tanh(c')
    /// ```
    pub fn convlstm_step(&mut self, x: Var, h: Var, c: Var, p: &ConvLstmParams) -> Result<(Var, Var)> {
        let hs = self.shape(h).to_vec();
        if hs.len() != 4 || self.shape(c) != hs.as_slice() || self.shape(x).len() != 4 || self.shape(x)[..3] != hs[..3] {
            return Err(NnError::Shape(format!(
                "ConvLSTM input {:?}, hidden {hs:?}, cell {:?}",
                self.shape(x),
                self.shape(c)
            )));
        }
        let f = hs[3];
        if self.shape(p.kernel)[3] != 4 * f {
            return Err(NnError::Shape(format!(
                "ConvLSTM kernel {:?} does not produce 4×{f} gate channels",
                self.shape(p.kernel)
            )));
        }
        let xh = self.concat(&[x, h], 3)?;
        let gates = self.conv2d(xh, p.kernel, p.bias, (1, 1), Padding::Same)?;
        let zi = self.slice(gates, 3, 0, f)?;
        let zf = self.slice(gates, 3, f, f)?;
        let zc = self.slice(gates, 3, 2 * f, f)?;
        let zo = self.slice(gates, 3, 3 * f, f)?;
        let pi = self.mul(c, p.w_ci)?;
        let pre_i = self.add(zi, pi)?;
        let i = self.sigmoid(pre_i);
        let pf = self.mul(c, p.w_cf)?;
        let pre_f = self.add(zf, pf)?;
        let fg = self.sigmoid(pre_f);
        let keep = self.mul(fg, c)?;
        let cand = self.tanh(zc);
        let write = self.mul(i, cand)?;
        let c_new = self.add(keep, write)?;
        let po = self.mul(c_new, p.w_co)?;
        let pre_o = self.add(zo, po)?;
        let o = self.sigmoid(pre_o);
        let tc = self.tanh(c_new);
        let h_new = self.mul(o, tc)?;
        Ok((h_new, c_new))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(NnError::Shape(format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|_| Vec::new()).collect();
        grads[loss.0] = vec![1.0];
        for id in (0..=loss.0).rev() {
            if grads[id].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[id]);
            self.propagate(id, &g, &mut grads);
            grads[id] = g;
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn acc<'g>(&self, grads: &'g mut [Vec<f64>], v: Var) -> &'g mut [f64] {
        let slot = &mut grads[v.0];
        if slot.is_empty() {
            *slot = vec![0.0; self.nodes[v.0].value.len()];
        }
        slot
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                self.acc(grads, *a).iter_mut().zip(g).for_each(|(d, v)| *d += v);
                let gb = self.acc(grads, *b);
                let n = gb.len().max(1);
                for (i, v) in g.iter().enumerate() {
                    gb[i % n] += v;
                }
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a).iter_mut().zip(g).for_each(|(d, v)| *d += v);
                self.acc(grads, *b).iter_mut().zip(g).for_each(|(d, v)| *d -= v);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let n = bv.len().max(1);
                let ga = self.acc(grads, *a);
                for (i, v) in g.iter().enumerate() {
                    ga[i] += v * bv[i % n];
                }
                let gb = self.acc(grads, *b);
                for (i, v) in g.iter().enumerate() {
                    gb[i % n] += v * av[i];
                }
            }
            Op::Scale(x, k) => {
                self.acc(grads, *x).iter_mut().zip(g).for_each(|(d, v)| *d += v * k);
            }
            Op::Linear { x, w, b } => {
                let ws = self.shape(*w);
                let (inner, out_dim) = (ws[0], ws[1]);
                let rows = g.len() / out_dim.max(1);
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                gemm(rows, out_dim, inner, g, false, wv, true, 1.0, self.acc(grads, *x));
                gemm(inner, rows, out_dim, xv, true, g, false, 1.0, self.acc(grads, *w));
                let gb = self.acc(grads, *b);
                for r in 0..rows {
                    for (d, v) in gb.iter_mut().zip(&g[r * out_dim..(r + 1) * out_dim]) {
                        *d += v;
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let gx = self.acc(grads, *x);
                for i in 0..g.len() {
                    if xv[i] > 0.0 {
                        gx[i] += g[i];
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                let gx = self.acc(grads, *x);
                for i in 0..g.len() {
                    gx[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                let gx = self.acc(grads, *x);
                for i in 0..g.len() {
                    gx[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            }
            Op::Reshape(x) => {
                self.acc(grads, *x).iter_mut().zip(g).for_each(|(d, v)| *d += v);
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let n = self.shape(v)[*axis] * inner;
                    let gv = self.acc(grads, v);
                    for o in 0..outer {
                        let src = &g[o * total * inner + offset..][..n];
                        gv[o * n..(o + 1) * n].iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                    offset += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, mid, inner) = split_axis(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                let gx = self.acc(grads, *x);
                for o in 0..outer {
                    let dst = &mut gx[(o * mid + start) * inner..][..len * inner];
                    dst.iter_mut().zip(&g[o * len * inner..][..len * inner]).for_each(|(d, s)| *d += s);
                }
            }
            Op::Gather { x, axis, indices } => {
                let (outer, mid, inner) = split_axis(self.shape(*x), *axis);
                let gx = self.acc(grads, *x);
                let k = indices.len();
                for o in 0..outer {
                    for (j, &i) in indices.iter().enumerate() {
                        let dst = &mut gx[(o * mid + i) * inner..][..inner];
                        dst.iter_mut().zip(&g[(o * k + j) * inner..][..inner]).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let wv = self.value(*w).data();
                gemm(geom.patch(), geom.rows(), geom.f, cols, true, g, false, 1.0, self.acc(grads, *w));
                let gb = self.acc(grads, *b);
                for r in 0..geom.rows() {
                    for (d, v) in gb.iter_mut().zip(&g[r * geom.f..(r + 1) * geom.f]) {
                        *d += v;
                    }
                }
                let mut dcols = vec![0.0; cols.len()];
                gemm(geom.rows(), geom.f, geom.patch(), g, false, wv, true, 0.0, &mut dcols);
                let gx = self.acc(grads, *x);
                geom.for_each_tap(|s, d| {
                    for ch in 0..geom.c {
                        gx[s + ch] += dcols[d + ch];
                    }
                });
            }
            Op::MaxPool { x, argmax } => {
                let gx = self.acc(grads, *x);
                for (v, &src) in g.iter().zip(argmax) {
                    gx[src] += v;
                }
            }
            Op::Dropout { x, mask } => {
                let gx = self.acc(grads, *x);
                for i in 0..g.len() {
                    gx[i] += g[i] * mask[i];
                }
            }
            Op::Scatter { x, weight, bias, targets } => {
                let e = targets.len();
                let o = node.value.shape()[1];
                let rows = g.len() / o.max(1);
                let xv = self.value(*x).data();
                let wv = self.value(*weight).data();
                let gx = self.acc(grads, *x);
                for r in 0..rows {
                    for (k, &t) in targets.iter().enumerate() {
                        gx[r * e + k] += wv[k] * g[r * o + t];
                    }
                }
                let gw = self.acc(grads, *weight);
                for r in 0..rows {
                    for (k, &t) in targets.iter().enumerate() {
                        gw[k] += xv[r * e + k] * g[r * o + t];
                    }
                }
                let gb = self.acc(grads, *bias);
                for r in 0..rows {
                    for (d, v) in gb.iter_mut().zip(&g[r * o..(r + 1) * o]) {
                        *d += v;
                    }
                }
            }
            Op::Mse { pred, target } => {
                let pv = self.value(*pred).data();
                let k = 2.0 * g[0] / pv.len() as f64;
                let gp = self.acc(grads, *pred);
                for i in 0..pv.len() {
                    gp[i] += k * (pv[i] - target[i]);
                }
            }
            Op::SumSquares(x) => {
                let xv = self.value(*x).data();
                let gx = self.acc(grads, *x);
                for i in 0..xv.len() {
                    gx[i] += 2.0 * g[0] * xv[i];
                }
            }
        }
    }

    /// Gradient of the last backward pass with respect to `v`; zeros when `v`
    /// did not influence the loss.
    pub fn grad(&self, v: Var) -> Result<Vec<f64>> {
        let grads = self
            .grads
            .as_ref()
            .ok_or_else(|| NnError::State("gradient requested before a backward pass".into()))?;
        let g = &grads[v.0];
        Ok(if g.is_empty() { vec![0.0; self.value(v).len()] } else { g.clone() })
    }

    /// Gradients for every parameter of `store`, summed over all uses on this tape.
    pub fn param_grads(&self, store: &ParamStore) -> Result<Vec<Vec<f64>>> {
        let grads = self
            .grads
            .as_ref()
            .ok_or_else(|| NnError::State("gradient requested before a backward pass".into()))?;
        let mut out: Vec<Vec<f64>> = (0..store.len()).map(|i| vec![0.0; store.get(i).len()]).collect();
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Op::Param(id), false) = (&node.op, g.is_empty()) {
                out[*id].iter_mut().zip(g).for_each(|(d, v)| *d += v);
            }
        }
        Ok(out)
    }
}
