//! Small neural-network building blocks with explicit backprop.
//!
//! The models in this crate are deliberately tiny (desk-scale images, a few
//! tens of thousands of parameters), so the layers are hand-rolled over
//! `ndarray` with f64 throughout: dense layers, 3x3 strided convolutions via
//! im2col + GEMM, ReLU, an LSTM cell unrolled over the full sequence, and
//! Adam. Everything is deterministic given a seeded rng and a fixed parameter
//! visit order.

use std::collections::HashMap;

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, IxDyn};
use rand::Rng;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum NnError {
    #[error("tensor {name}: shape {found:?} does not match expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("unknown tensor {0}")]
    UnknownTensor(String),
    #[error("missing tensor {0}")]
    MissingTensor(String),
}

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything holding trainable parameters. Visit order must be deterministic;
/// parameter names must be unique within one visit.
pub trait HasParams {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));
}

/// Collect `(name, shape, data)` for every parameter.
pub fn export_params(model: &mut dyn HasParams) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    model.visit_params("", &mut |name, p| {
        out.push((
            name.to_string(),
            p.value.shape().to_vec(),
            p.value.iter().copied().collect(),
        ));
    });
    out
}

/// Load parameter values by name. Every model parameter must be present with
/// a matching shape; extra tensors are an error.
pub fn import_params(
    model: &mut dyn HasParams,
    tensors: &[(String, Vec<usize>, Vec<f64>)],
) -> Result<(), NnError> {
    let map: HashMap<&str, (&Vec<usize>, &Vec<f64>)> = tensors
        .iter()
        .map(|(n, s, d)| (n.as_str(), (s, d)))
        .collect();
    let mut missing = Vec::new();
    let mut used = 0usize;
    let mut shape_err = None;
    model.visit_params("", &mut |name, p| {
        match map.get(name) {
            None => missing.push(name.to_string()),
            Some((shape, data)) => {
                if p.value.shape() != shape.as_slice() {
                    shape_err.get_or_insert(NnError::ShapeMismatch {
                        name: name.to_string(),
                        expected: p.value.shape().to_vec(),
                        found: (*shape).clone(),
                    });
                } else {
                    p.value = ArrayD::from_shape_vec(IxDyn(shape), (*data).clone())
                        .expect("shape checked");
                    used += 1;
                }
            }
        }
    });
    if let Some(e) = shape_err {
        return Err(e);
    }
    if let Some(name) = missing.into_iter().next() {
        return Err(NnError::MissingTensor(name));
    }
    if used != tensors.len() {
        let mut names: Vec<String> = Vec::new();
        model.visit_params("", &mut |name, _| names.push(name.to_string()));
        for (n, _, _) in tensors {
            if !names.contains(n) {
                return Err(NnError::UnknownTensor(n.clone()));
            }
        }
    }
    Ok(())
}

fn uniform_init<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> ArrayD<f64> {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("consistent shape")
}

/// Fully connected layer: `y = x W^T + b`.
pub struct Linear {
    pub w: Param,
    pub b: Param,
    in_dim: usize,
    out_dim: usize,
    cache_x: Option<Array2<f64>>,
}

impl Linear {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            w: Param::new(uniform_init(&[out_dim, in_dim], in_dim, rng)),
            b: Param::new(uniform_init(&[out_dim], in_dim, rng)),
            in_dim,
            out_dim,
            cache_x: None,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn w2(&self) -> Array2<f64> {
        self.w
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("linear weight is 2-d")
            .to_owned()
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        if train {
            self.cache_x = Some(x.clone());
        }
        self.forward_eval(x)
    }

    /// Inference path: no cache, shared reference.
    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        debug_assert_eq!(x.ncols(), self.in_dim);
        let w = self.w2();
        let b = self
            .b
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("bias is 1-d")
            .to_owned();
        let mut y = x.dot(&w.t());
        y += &b;
        y
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let x = self.cache_x.as_ref().expect("forward(train) before backward");
        let dw = dy.t().dot(x);
        let db: Array1<f64> = dy.sum_axis(Axis(0));
        self.w.grad += &dw.into_dyn();
        self.b.grad += &db.into_dyn();
        dy.dot(&self.w2())
    }
}

impl HasParams for Linear {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}.w"), &mut self.w);
        f(&format!("{prefix}.b"), &mut self.b);
    }
}

/// 3x3 convolution with padding 1 and a configurable stride, im2col + GEMM.
pub struct Conv2d {
    pub w: Param, // (out_ch, in_ch * 9)
    pub b: Param, // (out_ch)
    in_ch: usize,
    out_ch: usize,
    stride: usize,
    cache: Option<ConvCache>,
}

struct ConvCache {
    cols: Vec<Array2<f64>>, // per sample: (in_ch * 9, out_h * out_w)
    in_shape: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl Conv2d {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = in_ch * 9;
        Self {
            w: Param::new(uniform_init(&[out_ch, fan_in], fan_in, rng)),
            b: Param::new(uniform_init(&[out_ch], fan_in, rng)),
            in_ch,
            out_ch,
            stride,
            cache: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 - 3) / self.stride + 1, (w + 2 - 3) / self.stride + 1)
    }

    fn im2col(&self, x: &ndarray::ArrayView3<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
        let (c_in, h, w) = x.dim();
        let mut cols = Array2::zeros((c_in * 9, out_h * out_w));
        for c in 0..c_in {
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = c * 9 + ky * 3 + kx;
                    for oy in 0..out_h {
                        let y = (oy * self.stride + ky) as isize - 1;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for ox in 0..out_w {
                            let xpos = (ox * self.stride + kx) as isize - 1;
                            if xpos < 0 || xpos >= w as isize {
                                continue;
                            }
                            cols[[row, oy * out_w + ox]] = x[[c, y as usize, xpos as usize]];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(
        &self,
        dcols: &Array2<f64>,
        h: usize,
        w: usize,
        out_h: usize,
        out_w: usize,
    ) -> ndarray::Array3<f64> {
        let mut dx = ndarray::Array3::zeros((self.in_ch, h, w));
        for c in 0..self.in_ch {
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = c * 9 + ky * 3 + kx;
                    for oy in 0..out_h {
                        let y = (oy * self.stride + ky) as isize - 1;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for ox in 0..out_w {
                            let xpos = (ox * self.stride + kx) as isize - 1;
                            if xpos < 0 || xpos >= w as isize {
                                continue;
                            }
                            dx[[c, y as usize, xpos as usize]] += dcols[[row, oy * out_w + ox]];
                        }
                    }
                }
            }
        }
        dx
    }

    fn w2(&self) -> Array2<f64> {
        self.w
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("conv weight is 2-d")
            .to_owned()
    }

    fn forward_impl(&self, x: &Array4<f64>, cols_out: Option<&mut Vec<Array2<f64>>>) -> Array4<f64> {
        let (b, c, h, w) = x.dim();
        debug_assert_eq!(c, self.in_ch);
        let (out_h, out_w) = self.out_hw(h, w);
        let wmat = self.w2();
        let mut y = Array4::zeros((b, self.out_ch, out_h, out_w));
        let mut cache = cols_out;
        for s in 0..b {
            let cols = self.im2col(&x.index_axis(Axis(0), s), out_h, out_w);
            let ys = wmat.dot(&cols); // (out_ch, out_h * out_w)
            for oc in 0..self.out_ch {
                let bias = self.b.value[[oc]];
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        y[[s, oc, oy, ox]] = ys[[oc, oy * out_w + ox]] + bias;
                    }
                }
            }
            if let Some(cache) = cache.as_deref_mut() {
                cache.push(cols);
            }
        }
        y
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        if !train {
            return self.forward_impl(x, None);
        }
        let (b, c, h, w) = x.dim();
        let (out_h, out_w) = self.out_hw(h, w);
        let mut cols_cache = Vec::with_capacity(b);
        let y = self.forward_impl(x, Some(&mut cols_cache));
        self.cache = Some(ConvCache {
            cols: cols_cache,
            in_shape: (b, c, h, w),
            out_hw: (out_h, out_w),
        });
        y
    }

    /// Inference path: no cache, shared reference.
    pub fn forward_eval(&self, x: &Array4<f64>) -> Array4<f64> {
        self.forward_impl(x, None)
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let cache = self.cache.as_ref().expect("forward(train) before backward");
        let (b, c, h, w) = cache.in_shape;
        let (out_h, out_w) = cache.out_hw;
        let wmat = self.w2();
        let mut dx = Array4::zeros((b, c, h, w));
        let mut dw = Array2::<f64>::zeros((self.out_ch, self.in_ch * 9));
        let mut db = Array1::<f64>::zeros(self.out_ch);
        for s in 0..b {
            let mut dys = Array2::zeros((self.out_ch, out_h * out_w));
            for oc in 0..self.out_ch {
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let v = dy[[s, oc, oy, ox]];
                        dys[[oc, oy * out_w + ox]] = v;
                        db[oc] += v;
                    }
                }
            }
            dw += &dys.dot(&cache.cols[s].t());
            let dcols = wmat.t().dot(&dys);
            let dxs = self.col2im(&dcols, h, w, out_h, out_w);
            dx.index_axis_mut(Axis(0), s).assign(&dxs);
        }
        self.w.grad += &dw.into_dyn();
        self.b.grad += &db.into_dyn();
        dx
    }
}

impl HasParams for Conv2d {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}.w"), &mut self.w);
        f(&format!("{prefix}.b"), &mut self.b);
    }
}

/// Elementwise max(0, x) over a 2-d activation.
#[derive(Default)]
pub struct Relu2 {
    mask: Option<Array2<f64>>,
}

impl Relu2 {
    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        let y = x.mapv(|v| v.max(0.0));
        if train {
            self.mask = Some(x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        }
        y
    }

    pub fn backward(&self, dy: &Array2<f64>) -> Array2<f64> {
        dy * self.mask.as_ref().expect("forward(train) before backward")
    }
}

/// Elementwise max(0, x) over a 4-d activation.
#[derive(Default)]
pub struct Relu4 {
    mask: Option<Array4<f64>>,
}

impl Relu4 {
    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let y = x.mapv(|v| v.max(0.0));
        if train {
            self.mask = Some(x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        }
        y
    }

    pub fn backward(&self, dy: &Array4<f64>) -> Array4<f64> {
        dy * self.mask.as_ref().expect("forward(train) before backward")
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Single-layer LSTM unrolled over the whole sequence (full BPTT, no
/// truncation). Gate layout in the stacked dimension: input, forget, cell,
/// output.
pub struct Lstm {
    pub wx: Param, // (4 * hidden, input)
    pub wh: Param, // (4 * hidden, hidden)
    pub b: Param,  // (4 * hidden)
    input_dim: usize,
    hidden_dim: usize,
    cache: Option<LstmCache>,
}

struct LstmCache {
    xs: Vec<Array2<f64>>,
    hs: Vec<Array2<f64>>, // h_0 .. h_T (T + 1 entries)
    cs: Vec<Array2<f64>>, // c_0 .. c_T
    gates: Vec<Array2<f64>>, // post-activation (B, 4H) per step
    tanh_c: Vec<Array2<f64>>,
}

impl Lstm {
    pub fn new<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        Self {
            wx: Param::new(uniform_init(&[4 * hidden_dim, input_dim], input_dim, rng)),
            wh: Param::new(uniform_init(&[4 * hidden_dim, hidden_dim], hidden_dim, rng)),
            b: Param::new(uniform_init(&[4 * hidden_dim], hidden_dim, rng)),
            input_dim,
            hidden_dim,
            cache: None,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    fn mat(&self, p: &Param) -> Array2<f64> {
        p.value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("2-d weight")
            .to_owned()
    }

    /// Run the sequence from a zero state, returning the final hidden state.
    pub fn forward_sequence(&mut self, xs: &[Array2<f64>], train: bool) -> Array2<f64> {
        let batch = xs[0].nrows();
        debug_assert!(xs.iter().all(|x| x.ncols() == self.input_dim));
        let wx = self.mat(&self.wx);
        let wh = self.mat(&self.wh);
        let b = self
            .b
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("1-d bias")
            .to_owned();
        let hd = self.hidden_dim;

        let mut hs = vec![Array2::zeros((batch, hd))];
        let mut cs = vec![Array2::zeros((batch, hd))];
        let mut gates = Vec::with_capacity(xs.len());
        let mut tanh_cs = Vec::with_capacity(xs.len());
        for x in xs {
            let h_prev = hs.last().unwrap();
            let c_prev = cs.last().unwrap();
            let mut z = x.dot(&wx.t()) + h_prev.dot(&wh.t());
            z += &b;
            let mut gate = Array2::zeros((batch, 4 * hd));
            let mut c = Array2::zeros((batch, hd));
            let mut h = Array2::zeros((batch, hd));
            let mut tanh_c = Array2::zeros((batch, hd));
            for s in 0..batch {
                for k in 0..hd {
                    let i = sigmoid(z[[s, k]]);
                    let f = sigmoid(z[[s, hd + k]]);
                    let g = z[[s, 2 * hd + k]].tanh();
                    let o = sigmoid(z[[s, 3 * hd + k]]);
                    gate[[s, k]] = i;
                    gate[[s, hd + k]] = f;
                    gate[[s, 2 * hd + k]] = g;
                    gate[[s, 3 * hd + k]] = o;
                    let cv: f64 = f * c_prev[[s, k]] + i * g;
                    c[[s, k]] = cv;
                    let tc = cv.tanh();
                    tanh_c[[s, k]] = tc;
                    h[[s, k]] = o * tc;
                }
            }
            hs.push(h);
            cs.push(c);
            gates.push(gate);
            tanh_cs.push(tanh_c);
        }
        let out = hs.last().unwrap().clone();
        if train {
            self.cache = Some(LstmCache {
                xs: xs.to_vec(),
                hs,
                cs,
                gates,
                tanh_c: tanh_cs,
            });
        }
        out
    }

    /// Inference path: no cache, shared reference, constant memory in the
    /// sequence length.
    pub fn forward_eval(&self, xs: &[Array2<f64>]) -> Array2<f64> {
        let batch = xs[0].nrows();
        let wx = self.mat(&self.wx);
        let wh = self.mat(&self.wh);
        let b = self
            .b
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("1-d bias")
            .to_owned();
        let hd = self.hidden_dim;
        let mut h = Array2::zeros((batch, hd));
        let mut c = Array2::<f64>::zeros((batch, hd));
        for x in xs {
            let mut z = x.dot(&wx.t()) + h.dot(&wh.t());
            z += &b;
            let mut h_next = Array2::zeros((batch, hd));
            for s in 0..batch {
                for k in 0..hd {
                    let i = sigmoid(z[[s, k]]);
                    let f = sigmoid(z[[s, hd + k]]);
                    let g = z[[s, 2 * hd + k]].tanh();
                    let o = sigmoid(z[[s, 3 * hd + k]]);
                    let cv: f64 = f * c[[s, k]] + i * g;
                    c[[s, k]] = cv;
                    h_next[[s, k]] = o * cv.tanh();
                }
            }
            h = h_next;
        }
        h
    }

    /// BPTT from the gradient at the final hidden state. Returns the
    /// per-step input gradients.
    pub fn backward_sequence(&mut self, dh_last: &Array2<f64>) -> Vec<Array2<f64>> {
        let cache = self.cache.as_ref().expect("forward(train) before backward");
        let steps = cache.xs.len();
        let batch = dh_last.nrows();
        let hd = self.hidden_dim;
        let wx = self.mat(&self.wx);
        let wh = self.mat(&self.wh);

        let mut dwx = Array2::<f64>::zeros((4 * hd, self.input_dim));
        let mut dwh = Array2::<f64>::zeros((4 * hd, hd));
        let mut db = Array1::<f64>::zeros(4 * hd);
        let mut dxs = vec![Array2::zeros((batch, self.input_dim)); steps];

        let mut dh = dh_last.clone();
        let mut dc = Array2::<f64>::zeros((batch, hd));
        for t in (0..steps).rev() {
            let gate = &cache.gates[t];
            let tanh_c = &cache.tanh_c[t];
            let c_prev = &cache.cs[t];
            let h_prev = &cache.hs[t];
            let mut dz = Array2::zeros((batch, 4 * hd));
            for s in 0..batch {
                for k in 0..hd {
                    let i = gate[[s, k]];
                    let f = gate[[s, hd + k]];
                    let g = gate[[s, 2 * hd + k]];
                    let o = gate[[s, 3 * hd + k]];
                    let tc = tanh_c[[s, k]];
                    let dh_v = dh[[s, k]];
                    let dcv = dc[[s, k]] + dh_v * o * (1.0 - tc * tc);
                    let di = dcv * g;
                    let df = dcv * c_prev[[s, k]];
                    let dg = dcv * i;
                    let do_ = dh_v * tc;
                    dz[[s, k]] = di * i * (1.0 - i);
                    dz[[s, hd + k]] = df * f * (1.0 - f);
                    dz[[s, 2 * hd + k]] = dg * (1.0 - g * g);
                    dz[[s, 3 * hd + k]] = do_ * o * (1.0 - o);
                    dc[[s, k]] = dcv * f;
                }
            }
            dwx += &dz.t().dot(&cache.xs[t]);
            dwh += &dz.t().dot(h_prev);
            db += &dz.sum_axis(Axis(0));
            dxs[t] = dz.dot(&wx);
            dh = dz.dot(&wh);
        }
        self.wx.grad += &dwx.into_dyn();
        self.wh.grad += &dwh.into_dyn();
        self.b.grad += &db.into_dyn();
        dxs
    }
}

impl HasParams for Lstm {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}.wx"), &mut self.wx);
        f(&format!("{prefix}.wh"), &mut self.wh);
        f(&format!("{prefix}.b"), &mut self.b);
    }
}

/// Adam with bias correction. State is keyed by parameter name and created
/// lazily on the first step.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    state: HashMap<String, (ArrayD<f64>, ArrayD<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, state: HashMap::new() }
    }

    pub fn step(&mut self, model: &mut dyn HasParams) {
        self.t += 1;
        let t = self.t;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        let state = &mut self.state;
        model.visit_params("", &mut |name, p| {
            let (m, v) = state
                .entry(name.to_string())
                .or_insert_with(|| (ArrayD::zeros(p.value.raw_dim()), ArrayD::zeros(p.value.raw_dim())));
            azip_update(m, v, &p.grad, b1, b2);
            ndarray::Zip::from(&mut p.value)
                .and(&*m)
                .and(&*v)
                .for_each(|w, &mv, &vv| {
                    let mhat = mv / bc1;
                    let vhat = vv / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                });
        });
    }
}

fn azip_update(m: &mut ArrayD<f64>, v: &mut ArrayD<f64>, g: &ArrayD<f64>, b1: f64, b2: f64) {
    ndarray::Zip::from(m).and(v).and(g).for_each(|mv, vv, &gv| {
        *mv = b1 * *mv + (1.0 - b1) * gv;
        *vv = b2 * *vv + (1.0 - b2) * gv * gv;
    });
}

pub fn zero_grads(model: &mut dyn HasParams) {
    model.visit_params("", &mut |_, p| p.zero_grad());
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Central-difference gradient check of a scalar loss through a layer.
    fn assert_close(analytic: f64, numeric: f64, tol: f64, what: &str) {
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic - numeric).abs() / denom;
        assert!(
            rel < tol,
            "{what}: analytic {analytic:.6e} vs numeric {numeric:.6e} (rel {rel:.3e})"
        );
    }

    /// Scalar test loss: sum of squares of the output.
    fn loss2(y: &Array2<f64>) -> f64 {
        y.iter().map(|v| v * v).sum()
    }

    #[test]
    fn linear_gradcheck() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut layer = Linear::new(5, 3, &mut rng);
        let x = Array2::from_shape_fn((4, 5), |(i, j)| 0.1 * (i as f64) - 0.05 * (j as f64) + 0.3);
        let y = layer.forward(&x, true);
        let dy = y.mapv(|v| 2.0 * v);
        let dx = layer.backward(&dy);

        let h = 1e-6;
        // Input gradient.
        for idx in [(0, 0), (2, 3), (3, 4)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let num = (loss2(&layer.forward(&xp, false)) - loss2(&layer.forward(&xm, false)))
                / (2.0 * h);
            assert_close(dx[idx], num, 1e-6, "linear dx");
        }
        // Weight gradient.
        for idx in [[0usize, 0usize], [2, 4]] {
            let orig = layer.w.value[IxDyn(&idx)];
            layer.w.value[IxDyn(&idx)] = orig + h;
            let lp = loss2(&layer.forward(&x, false));
            layer.w.value[IxDyn(&idx)] = orig - h;
            let lm = loss2(&layer.forward(&x, false));
            layer.w.value[IxDyn(&idx)] = orig;
            assert_close(layer.w.grad[IxDyn(&idx)], (lp - lm) / (2.0 * h), 1e-6, "linear dw");
        }
    }

    fn loss4(y: &Array4<f64>) -> f64 {
        y.iter().map(|v| v * v).sum()
    }

    #[test]
    fn conv_gradcheck() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut conv = Conv2d::new(2, 3, 2, &mut rng);
        let x = Array4::from_shape_fn((2, 2, 6, 6), |(b, c, y, xx)| {
            ((b + 2 * c + 3 * y + 5 * xx) % 7) as f64 * 0.1 - 0.2
        });
        let y = conv.forward(&x, true);
        let dy = y.mapv(|v| 2.0 * v);
        let dx = conv.backward(&dy);

        let h = 1e-6;
        for idx in [(0, 0, 0, 0), (1, 1, 3, 2), (0, 1, 5, 5)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let num = (loss4(&conv.forward(&xp, false)) - loss4(&conv.forward(&xm, false)))
                / (2.0 * h);
            assert_close(dx[idx], num, 1e-5, "conv dx");
        }
        for idx in [[0usize, 0usize], [2, 17]] {
            let orig = conv.w.value[IxDyn(&idx)];
            conv.w.value[IxDyn(&idx)] = orig + h;
            let lp = loss4(&conv.forward(&x, false));
            conv.w.value[IxDyn(&idx)] = orig - h;
            let lm = loss4(&conv.forward(&x, false));
            conv.w.value[IxDyn(&idx)] = orig;
            assert_close(conv.w.grad[IxDyn(&idx)], (lp - lm) / (2.0 * h), 1e-5, "conv dw");
        }
    }

    #[test]
    fn lstm_gradcheck() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut lstm = Lstm::new(3, 4, &mut rng);
        let xs: Vec<Array2<f64>> = (0..5)
            .map(|t| {
                Array2::from_shape_fn((2, 3), |(b, k)| {
                    0.2 * ((t + b + k) as f64).sin()
                })
            })
            .collect();
        let y = lstm.forward_sequence(&xs, true);
        let dy = y.mapv(|v| 2.0 * v);
        let dxs = lstm.backward_sequence(&dy);

        let h = 1e-6;
        // Input gradient at an early step (exercises the full BPTT chain).
        for (t, idx) in [(0usize, (0usize, 1usize)), (2, (1, 2)), (4, (0, 0))] {
            let mut xsp = xs.clone();
            xsp[t][idx] += h;
            let mut xsm = xs.clone();
            xsm[t][idx] -= h;
            let num = (loss2(&lstm.forward_sequence(&xsp, false))
                - loss2(&lstm.forward_sequence(&xsm, false)))
                / (2.0 * h);
            assert_close(dxs[t][idx], num, 1e-5, "lstm dx");
        }
        for idx in [[0usize, 0usize], [7, 2], [13, 3]] {
            let orig = lstm.wh.value[IxDyn(&idx)];
            lstm.wh.value[IxDyn(&idx)] = orig + h;
            let lp = loss2(&lstm.forward_sequence(&xs, false));
            lstm.wh.value[IxDyn(&idx)] = orig - h;
            let lm = loss2(&lstm.forward_sequence(&xs, false));
            lstm.wh.value[IxDyn(&idx)] = orig;
            assert_close(lstm.wh.grad[IxDyn(&idx)], (lp - lm) / (2.0 * h), 1e-5, "lstm dwh");
        }
    }

    #[test]
    fn adam_reduces_quadratic() {
        struct Quad {
            p: Param,
        }
        impl HasParams for Quad {
            fn visit_params(&mut self, _prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
                f("p", &mut self.p);
            }
        }
        let mut q = Quad { p: Param::new(ArrayD::from_elem(IxDyn(&[4]), 2.0)) };
        let mut adam = Adam::new(0.1);
        for _ in 0..200 {
            let v = q.p.value.clone();
            q.p.grad = v.mapv(|x| 2.0 * x);
            adam.step(&mut q);
            zero_grads(&mut q);
        }
        assert!(q.p.value.iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn export_import_roundtrip() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut a = Linear::new(3, 2, &mut rng);
        let mut b = Linear::new(3, 2, &mut rng);
        struct Wrap(Linear);
        impl HasParams for Wrap {
            fn visit_params(&mut self, _p: &str, f: &mut dyn FnMut(&str, &mut Param)) {
                self.0.visit_params("lin", f);
            }
        }
        let mut wa = Wrap(std::mem::replace(&mut a, Linear::new(1, 1, &mut rng)));
        let mut wb = Wrap(std::mem::replace(&mut b, Linear::new(1, 1, &mut rng)));
        let tensors = export_params(&mut wa);
        import_params(&mut wb, &tensors).unwrap();
        let x = Array2::from_shape_fn((2, 3), |(i, j)| (i + j) as f64);
        let ya = wa.0.forward(&x, false);
        let yb = wb.0.forward(&x, false);
        assert_eq!(ya, yb);
    }
}
