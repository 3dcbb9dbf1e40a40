//! Layers with hand-written reverse passes. Every layer caches what it needs
//! during `forward` and accumulates parameter gradients during `backward`.
//! Tensors are `(batch, time, features)`.

use ndarray::{s, Array2, Array3, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::param::Param;

pub type Tensor = Array3<f64>;

pub trait Layer {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor;
    /// Gradient with respect to the last forward input. Parameter gradients
    /// are added to `Param::grad`.
    fn backward(&mut self, dy: &Tensor) -> Tensor;
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

pub(crate) fn flat(x: &Tensor) -> Array2<f64> {
    let (b, t, f) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((b * t, f))
        .expect("standard layout")
}

pub(crate) fn unflat(a: Array2<f64>, b: usize, t: usize) -> Tensor {
    let f = a.ncols();
    a.as_standard_layout()
        .into_owned()
        .into_shape_with_order((b, t, f))
        .expect("standard layout")
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn add_bias(y: &mut Array2<f64>, b: &Param) {
    let bias = ArrayView1::from(&b.value[..]);
    y.rows_mut().into_iter().for_each(|mut r| r += &bias);
}

fn add_bias_grad(b: &mut Param, dy: &Array2<f64>) {
    for (g, s) in b.grad.iter_mut().zip(dy.sum_axis(Axis(0))) {
        *g += s;
    }
}

// ---------------------------------------------------------------- dense

/// Affine map on the feature axis, optionally followed by ReLU.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Param,
    pub b: Param,
    pub relu: bool,
    cache: Option<(Array2<f64>, Array2<f64>, usize, usize)>,
}

impl Dense {
    pub fn new<R: Rng>(name: &str, input: usize, output: usize, relu: bool, rng: &mut R) -> Self {
        Dense {
            w: Param::glorot(format!("{name}.w"), &[input, output], input, output, rng),
            b: Param::zeros(format!("{name}.b"), &[output]),
            relu,
            cache: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape[0]
    }

    pub fn output_dim(&self) -> usize {
        self.w.shape[1]
    }
}

impl Layer for Dense {
    fn forward(&mut self, x: &Tensor, _train: bool) -> Tensor {
        let (b, t, _) = x.dim();
        let x2 = flat(x);
        let mut y = x2.dot(&self.w.mat());
        add_bias(&mut y, &self.b);
        if self.relu {
            y.mapv_inplace(|v| v.max(0.0));
        }
        self.cache = Some((x2, y.clone(), b, t));
        unflat(y, b, t)
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (x2, y, b, t) = self.cache.as_ref().expect("forward before backward");
        let mut d = flat(dy);
        if self.relu {
            d.zip_mut_with(y, |g, &v| {
                if v <= 0.0 {
                    *g = 0.0
                }
            });
        }
        self.w.grad_mat_mut().scaled_add(1.0, &x2.t().dot(&d));
        add_bias_grad(&mut self.b, &d);
        unflat(d.dot(&self.w.mat().t()), *b, *t)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}

// ---------------------------------------------------------------- conv

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that keeps the time length.
    Same,
    Valid,
}

/// Stride-1 dilated cross-correlation over time. The kernel is stored as a
/// `(k * c_in, c_out)` matrix with tap-major rows.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: Param,
    pub b: Param,
    pub kernel: usize,
    pub dilation: usize,
    pub padding: Padding,
    cache: Option<(Array2<f64>, usize, usize)>,
}

impl Conv1d {
    pub fn new<R: Rng>(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        padding: Padding,
        rng: &mut R,
    ) -> Self {
        Conv1d {
            w: Param::glorot(
                format!("{name}.w"),
                &[kernel * c_in, c_out],
                kernel * c_in,
                kernel * c_out,
                rng,
            ),
            b: Param::zeros(format!("{name}.b"), &[c_out]),
            kernel,
            dilation,
            padding,
            cache: None,
        }
    }

    pub fn c_in(&self) -> usize {
        self.w.shape[0] / self.kernel
    }

    /// Output length for an input of `t` steps, `None` if the dilated kernel
    /// does not fit.
    pub fn output_len(&self, t: usize) -> Option<usize> {
        let span = (self.kernel - 1) * self.dilation;
        match self.padding {
            Padding::Same => (t > 0).then_some(t),
            Padding::Valid => t.checked_sub(span).filter(|&n| n > 0),
        }
    }

    fn offset(&self) -> isize {
        match self.padding {
            Padding::Same => -(((self.kernel - 1) / 2 * self.dilation) as isize),
            Padding::Valid => 0,
        }
    }

    /// Source index of tap `j` for output step `i`.
    fn source(&self, i: usize, j: usize, t_in: usize) -> Option<usize> {
        let s = i as isize + self.offset() + (j * self.dilation) as isize;
        (s >= 0 && (s as usize) < t_in).then_some(s as usize)
    }
}

impl Layer for Conv1d {
    fn forward(&mut self, x: &Tensor, _train: bool) -> Tensor {
        let (b, t_in, c) = x.dim();
        assert_eq!(c, self.c_in(), "conv input channels");
        let t_out = self
            .output_len(t_in)
            .expect("kernel larger than padded window");
        let mut cols = Array2::zeros((b * t_out, self.kernel * c));
        for bi in 0..b {
            for i in 0..t_out {
                let mut row = cols.row_mut(bi * t_out + i);
                for j in 0..self.kernel {
                    if let Some(src) = self.source(i, j, t_in) {
                        row.slice_mut(s![j * c..(j + 1) * c])
                            .assign(&x.slice(s![bi, src, ..]));
                    }
                }
            }
        }
        let mut y = cols.dot(&self.w.mat());
        add_bias(&mut y, &self.b);
        self.cache = Some((cols, b, t_in));
        unflat(y, b, t_out)
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (cols, b, t_in) = self.cache.take().expect("forward before backward");
        let t_out = dy.dim().1;
        let c = self.c_in();
        let d = flat(dy);
        self.w.grad_mat_mut().scaled_add(1.0, &cols.t().dot(&d));
        add_bias_grad(&mut self.b, &d);
        let dcols = d.dot(&self.w.mat().t());
        let mut dx = Tensor::zeros((b, t_in, c));
        for bi in 0..b {
            for i in 0..t_out {
                let row = dcols.row(bi * t_out + i);
                for j in 0..self.kernel {
                    if let Some(src) = self.source(i, j, t_in) {
                        let mut dst = dx.slice_mut(s![bi, src, ..]);
                        dst += &row.slice(s![j * c..(j + 1) * c]);
                    }
                }
            }
        }
        self.cache = Some((cols, b, t_in));
        dx
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}

// ---------------------------------------------------------------- batchnorm

/// Per-channel batch normalisation over batch and time.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<(Array2<f64>, Vec<f64>, bool, usize, usize)>,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: Param::filled(format!("{name}.gamma"), &[channels], 1.0, false),
            beta: Param::zeros(format!("{name}.beta"), &[channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.99,
            eps: 1e-5,
            cache: None,
        }
    }
}

impl Layer for BatchNorm {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let (b, t, c) = x.dim();
        let x2 = flat(x);
        let n = (b * t) as f64;
        let (mean, var) = if train {
            let mean: Vec<f64> = x2.mean_axis(Axis(0)).expect("non-empty batch").to_vec();
            let var: Vec<f64> = (0..c)
                .map(|k| {
                    x2.column(k)
                        .iter()
                        .map(|v| (v - mean[k]).powi(2))
                        .sum::<f64>()
                        / n
                })
                .collect();
            for k in 0..c {
                self.running_mean[k] =
                    self.momentum * self.running_mean[k] + (1.0 - self.momentum) * mean[k];
                self.running_var[k] =
                    self.momentum * self.running_var[k] + (1.0 - self.momentum) * var[k];
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = x2;
        let mut y = Array2::zeros((b * t, c));
        for (mut xr, mut yr) in xhat.rows_mut().into_iter().zip(y.rows_mut()) {
            for k in 0..c {
                xr[k] = (xr[k] - mean[k]) * inv[k];
                yr[k] = self.gamma.value[k] * xr[k] + self.beta.value[k];
            }
        }
        self.cache = Some((xhat, inv, train, b, t));
        unflat(y, b, t)
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (xhat, inv, train, b, t) = self.cache.as_ref().expect("forward before backward");
        let d = flat(dy);
        let c = d.ncols();
        let n = (b * t) as f64;
        let mut dx = Array2::zeros(d.raw_dim());
        for k in 0..c {
            let dcol = d.column(k);
            let xcol = xhat.column(k);
            let sum_d: f64 = dcol.sum();
            let sum_dx: f64 = dcol.iter().zip(xcol).map(|(a, b)| a * b).sum();
            self.gamma.grad[k] += sum_dx;
            self.beta.grad[k] += sum_d;
            let g = self.gamma.value[k] * inv[k];
            for r in 0..d.nrows() {
                dx[[r, k]] = if *train {
                    g * (d[[r, k]] - sum_d / n - xhat[[r, k]] * sum_dx / n)
                } else {
                    g * d[[r, k]]
                };
            }
        }
        unflat(dx, *b, *t)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

// ---------------------------------------------------------------- maxpool

/// Non-overlapping max pooling over time with window and stride `h`.
#[derive(Debug, Clone)]
pub struct MaxPool {
    pub h: usize,
    cache: Option<(Array3<usize>, usize)>,
}

impl MaxPool {
    pub fn new(h: usize) -> Self {
        assert!(h >= 1, "pool window must be positive");
        MaxPool { h, cache: None }
    }

    pub fn output_len(&self, t: usize) -> Option<usize> {
        (t >= self.h).then(|| t / self.h)
    }
}

impl Layer for MaxPool {
    fn forward(&mut self, x: &Tensor, _train: bool) -> Tensor {
        let (b, t, c) = x.dim();
        let t_out = self.output_len(t).expect("pool window exceeds length");
        let mut y = Tensor::zeros((b, t_out, c));
        let mut arg = Array3::zeros((b, t_out, c));
        for bi in 0..b {
            for i in 0..t_out {
                for k in 0..c {
                    let mut best = i * self.h;
                    for j in i * self.h + 1..(i + 1) * self.h {
                        if x[[bi, j, k]] > x[[bi, best, k]] {
                            best = j;
                        }
                    }
                    y[[bi, i, k]] = x[[bi, best, k]];
                    arg[[bi, i, k]] = best;
                }
            }
        }
        self.cache = Some((arg, t));
        y
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (arg, t) = self.cache.as_ref().expect("forward before backward");
        let (b, t_out, c) = dy.dim();
        let mut dx = Tensor::zeros((b, *t, c));
        for bi in 0..b {
            for i in 0..t_out {
                for k in 0..c {
                    dx[[bi, arg[[bi, i, k]], k]] += dy[[bi, i, k]];
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------- conv block

/// Convolution, batch normalisation, max pooling.
#[derive(Debug, Clone)]
pub struct ConvBranch {
    pub conv: Conv1d,
    pub norm: BatchNorm,
    pub pool: MaxPool,
}

impl Layer for ConvBranch {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let y = self.conv.forward(x, train);
        let y = self.norm.forward(&y, train);
        self.pool.forward(&y, train)
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let d = self.pool.backward(dy);
        let d = self.norm.backward(&d);
        self.conv.backward(&d)
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.conv.params();
        v.extend(self.norm.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv.params_mut();
        v.extend(self.norm.params_mut());
        v
    }
}

/// A plain branch and an optional dilated branch whose outputs are summed.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub plain: ConvBranch,
    pub dilated: Option<ConvBranch>,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        pool: usize,
        with_dilated: bool,
        rng: &mut R,
    ) -> Self {
        let branch = |tag: &str, dil: usize, rng: &mut R| ConvBranch {
            conv: Conv1d::new(
                &format!("{name}.{tag}.conv"),
                c_in,
                c_out,
                kernel,
                dil,
                Padding::Same,
                rng,
            ),
            norm: BatchNorm::new(&format!("{name}.{tag}.bn"), c_out),
            pool: MaxPool::new(pool),
        };
        let plain = branch("plain", 1, rng);
        let dilated = with_dilated.then(|| branch("dilated", dilation, rng));
        ConvBlock { plain, dilated }
    }
}

impl Layer for ConvBlock {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut y = self.plain.forward(x, train);
        if let Some(d) = &mut self.dilated {
            y += &d.forward(x, train);
        }
        y
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut dx = self.plain.backward(dy);
        if let Some(d) = &mut self.dilated {
            dx += &d.backward(dy);
        }
        dx
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.plain.params();
        if let Some(d) = &self.dilated {
            v.extend(d.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.plain.params_mut();
        if let Some(d) = &mut self.dilated {
            v.extend(d.params_mut());
        }
        v
    }
}

// ---------------------------------------------------------------- dropout

/// Inverted dropout. Identity outside training.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
    rng: ChaCha8Rng,
    mask: Option<Tensor>,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1)");
        Dropout {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
        }
    }
}

impl Layer for Dropout {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        if !train || self.p == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 / (1.0 - self.p);
        let p = self.p;
        let rng = &mut self.rng;
        let mask = x.mapv(|_| if rng.random::<f64>() < p { 0.0 } else { keep });
        let y = x * &mask;
        self.mask = Some(mask);
        y
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        match &self.mask {
            Some(m) => dy * m,
            None => dy.clone(),
        }
    }
}

// ---------------------------------------------------------------- lstm

struct LstmStep {
    /// Activated gates `[i | f | g | o]`.
    gates: Array2<f64>,
    c: Array2<f64>,
    /// `tanh(c)`, reused by the reverse pass.
    tc: Array2<f64>,
    h: Array2<f64>,
}

/// Single-direction LSTM returning the full hidden sequence. The reverse
/// direction reads time backwards and writes its outputs at the original
/// positions.
pub struct Lstm {
    pub wx: Param,
    pub wh: Param,
    pub b: Param,
    pub units: usize,
    pub reverse: bool,
    cache: Option<(Array2<f64>, Vec<LstmStep>)>,
}

impl std::fmt::Debug for Lstm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lstm")
            .field("units", &self.units)
            .field("reverse", &self.reverse)
            .finish()
    }
}

impl Lstm {
    pub fn new<R: Rng>(name: &str, input: usize, units: usize, reverse: bool, rng: &mut R) -> Self {
        let mut b = Param::zeros(format!("{name}.b"), &[4 * units]);
        b.value[units..2 * units].iter_mut().for_each(|v| *v = 1.0);
        Lstm {
            wx: Param::glorot(
                format!("{name}.wx"),
                &[input, 4 * units],
                input,
                4 * units,
                rng,
            ),
            wh: Param::glorot(
                format!("{name}.wh"),
                &[units, 4 * units],
                units,
                4 * units,
                rng,
            ),
            b,
            units,
            reverse,
            cache: None,
        }
    }

    fn time(&self, step: usize, t: usize) -> usize {
        if self.reverse {
            t - 1 - step
        } else {
            step
        }
    }
}

impl Layer for Lstm {
    fn forward(&mut self, x: &Tensor, _train: bool) -> Tensor {
        let (b, t, _) = x.dim();
        let u = self.units;
        let x2 = flat(x);
        let mut xw = x2.dot(&self.wx.mat());
        add_bias(&mut xw, &self.b);
        let xw = unflat(xw, b, t);
        let mut out = Tensor::zeros((b, t, u));
        let mut h = Array2::<f64>::zeros((b, u));
        let mut c = Array2::<f64>::zeros((b, u));
        let mut steps = Vec::with_capacity(t);
        for step in 0..t {
            let ti = self.time(step, t);
            let mut z = h.dot(&self.wh.mat());
            z += &xw.slice(s![.., ti, ..]);
            let zs = z.as_slice_mut().expect("fresh matrix");
            let mut tc = Array2::<f64>::zeros((b, u));
            let (cs, hs) = (
                c.as_slice_mut().expect("standard"),
                h.as_slice_mut().expect("standard"),
            );
            let ts = tc.as_slice_mut().expect("fresh matrix");
            for (r, row) in zs.chunks_exact_mut(4 * u).enumerate() {
                let (ifo, rest) = row.split_at_mut(2 * u);
                let (g, o) = rest.split_at_mut(u);
                ifo.iter_mut()
                    .chain(o.iter_mut())
                    .for_each(|v| *v = sigmoid(*v));
                g.iter_mut().for_each(|v| *v = v.tanh());
                for k in 0..u {
                    let ck = ifo[u + k] * cs[r * u + k] + ifo[k] * g[k];
                    cs[r * u + k] = ck;
                    ts[r * u + k] = ck.tanh();
                    hs[r * u + k] = o[k] * ts[r * u + k];
                }
            }
            out.slice_mut(s![.., ti, ..]).assign(&h);
            steps.push(LstmStep {
                gates: z,
                c: c.clone(),
                tc,
                h: h.clone(),
            });
        }
        self.cache = Some((x2, steps));
        out
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (x2, steps) = self.cache.take().expect("forward before backward");
        let (b, t, _) = dy.dim();
        let u = self.units;
        let zeros = Array2::zeros((b, u));
        let mut dh_next = Array2::<f64>::zeros((b, u));
        let mut dc_next = Array2::<f64>::zeros((b, u));
        let mut dz_all = Tensor::zeros((b, t, 4 * u));
        for step in (0..t).rev() {
            let ti = self.time(step, t);
            let st = &steps[step];
            let (h_prev, c_prev) = if step == 0 {
                (&zeros, &zeros)
            } else {
                (&steps[step - 1].h, &steps[step - 1].c)
            };
            let dh = &dy.slice(s![.., ti, ..]) + &dh_next;
            let mut dz = Array2::zeros((b, 4 * u));
            let (gates, tcs) = (
                st.gates.as_slice().expect("standard"),
                st.tc.as_slice().expect("standard"),
            );
            let (cp, dhs) = (
                c_prev.as_slice().expect("standard"),
                dh.as_slice().expect("standard"),
            );
            let dcs = dc_next.as_slice_mut().expect("standard");
            let dzs = dz.as_slice_mut().expect("fresh matrix");
            for r in 0..b {
                let gr = &gates[r * 4 * u..(r + 1) * 4 * u];
                let dzr = &mut dzs[r * 4 * u..(r + 1) * 4 * u];
                for k in 0..u {
                    let (i, f, g, o) = (gr[k], gr[u + k], gr[2 * u + k], gr[3 * u + k]);
                    let j = r * u + k;
                    let tc = tcs[j];
                    let dc = dhs[j] * o * (1.0 - tc * tc) + dcs[j];
                    dzr[k] = dc * g * i * (1.0 - i);
                    dzr[u + k] = dc * cp[j] * f * (1.0 - f);
                    dzr[2 * u + k] = dc * i * (1.0 - g * g);
                    dzr[3 * u + k] = dhs[j] * tc * o * (1.0 - o);
                    dcs[j] = dc * f;
                }
            }
            self.wh.grad_mat_mut().scaled_add(1.0, &h_prev.t().dot(&dz));
            dh_next = dz.dot(&self.wh.mat().t());
            dz_all.slice_mut(s![.., ti, ..]).assign(&dz);
        }
        let dz2 = flat(&dz_all);
        self.wx.grad_mat_mut().scaled_add(1.0, &x2.t().dot(&dz2));
        add_bias_grad(&mut self.b, &dz2);
        let dx = unflat(dz2.dot(&self.wx.mat().t()), b, t);
        self.cache = Some((x2, steps));
        dx
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.wx, &self.wh, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.wx, &mut self.wh, &mut self.b]
    }
}

/// Forward and backward LSTMs over the same input; hidden states are summed.
#[derive(Debug)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new<R: Rng>(name: &str, input: usize, units: usize, rng: &mut R) -> Self {
        BiLstm {
            fwd: Lstm::new(&format!("{name}.fwd"), input, units, false, rng),
            bwd: Lstm::new(&format!("{name}.bwd"), input, units, true, rng),
        }
    }
}

impl Layer for BiLstm {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        self.fwd.forward(x, train) + self.bwd.forward(x, train)
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        self.fwd.backward(dy) + self.bwd.backward(dy)
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.fwd.params();
        v.extend(self.bwd.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.fwd.params_mut();
        v.extend(self.bwd.params_mut());
        v
    }
}

// ---------------------------------------------------------------- attention

/// Position-aware attention. Keys `K = xW + b`; scores `K ⊙ (K + ω·i)` with
/// 0-based step `i`; softmax over time separately per channel; the context
/// `Σᵢ Aᵢ ⊙ xᵢ` is repeated `z` times.
#[derive(Debug, Clone)]
pub struct Attention {
    pub key: Dense,
    pub omega: f64,
    pub z: usize,
    cache: Option<(Tensor, Tensor, Tensor)>,
}

impl Attention {
    pub fn new<R: Rng>(name: &str, width: usize, omega: f64, z: usize, rng: &mut R) -> Self {
        assert!(omega >= 0.0, "omega must be non-negative");
        Attention {
            key: Dense::new(&format!("{name}.key"), width, width, false, rng),
            omega,
            z,
            cache: None,
        }
    }

    /// Attention weights of the last forward pass, `(batch, time, channel)`.
    pub fn weights(&self) -> Option<&Tensor> {
        self.cache.as_ref().map(|c| &c.2)
    }
}

impl Layer for Attention {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let (b, t, r) = x.dim();
        let k = self.key.forward(x, train);
        let mut a = Tensor::zeros((b, t, r));
        let mut ctx = Array2::zeros((b, r));
        for bi in 0..b {
            for ch in 0..r {
                let scores: Vec<f64> = (0..t)
                    .map(|i| k[[bi, i, ch]] * (k[[bi, i, ch]] + self.omega * i as f64))
                    .collect();
                let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let sum: f64 = e.iter().sum();
                for i in 0..t {
                    a[[bi, i, ch]] = e[i] / sum;
                    ctx[[bi, ch]] += a[[bi, i, ch]] * x[[bi, i, ch]];
                }
            }
        }
        let out = ctx
            .insert_axis(Axis(1))
            .broadcast((b, self.z, r))
            .expect("broadcast")
            .to_owned();
        self.cache = Some((x.clone(), k, a));
        out
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (x, k, a) = self.cache.as_ref().expect("forward before backward");
        let (b, t, r) = x.dim();
        let dctx = dy.sum_axis(Axis(1));
        let mut dx = Tensor::zeros((b, t, r));
        let mut dk = Tensor::zeros((b, t, r));
        for bi in 0..b {
            for ch in 0..r {
                let g = dctx[[bi, ch]];
                let da: Vec<f64> = (0..t).map(|i| g * x[[bi, i, ch]]).collect();
                let dot: f64 = (0..t).map(|i| a[[bi, i, ch]] * da[i]).sum();
                for i in 0..t {
                    let ai = a[[bi, i, ch]];
                    dx[[bi, i, ch]] = ai * g;
                    let ds = ai * (da[i] - dot);
                    dk[[bi, i, ch]] = ds * (2.0 * k[[bi, i, ch]] + self.omega * i as f64);
                }
            }
        }
        dx + self.key.backward(&dk)
    }

    fn params(&self) -> Vec<&Param> {
        self.key.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.key.params_mut()
    }
}

/// Repeats the last time step `z` times.
#[derive(Debug, Clone)]
pub struct RepeatLast {
    pub z: usize,
    t: usize,
}

impl RepeatLast {
    pub fn new(z: usize) -> Self {
        RepeatLast { z, t: 0 }
    }
}

impl Layer for RepeatLast {
    fn forward(&mut self, x: &Tensor, _train: bool) -> Tensor {
        let (b, t, r) = x.dim();
        self.t = t;
        x.slice(s![.., t - 1..t, ..])
            .broadcast((b, self.z, r))
            .expect("broadcast")
            .to_owned()
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (b, _, r) = dy.dim();
        let mut dx = Tensor::zeros((b, self.t, r));
        dx.slice_mut(s![.., self.t - 1, ..])
            .assign(&dy.sum_axis(Axis(1)));
        dx
    }
}

// ---------------------------------------------------------------- head

/// Affine projection squashed by the logistic function into `(0, 1)`.
#[derive(Debug, Clone)]
pub struct SigmoidHead {
    pub dense: Dense,
    y: Option<Tensor>,
}

impl SigmoidHead {
    pub fn new<R: Rng>(name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        SigmoidHead {
            dense: Dense::new(name, input, output, false, rng),
            y: None,
        }
    }
}

impl Layer for SigmoidHead {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let y = self.dense.forward(x, train).mapv(sigmoid);
        self.y = Some(y.clone());
        y
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let y = self.y.as_ref().expect("forward before backward");
        let dz = dy * &y.mapv(|v| v * (1.0 - v));
        self.dense.backward(&dz)
    }

    fn params(&self) -> Vec<&Param> {
        self.dense.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.dense.params_mut()
    }
}

/// Maps unit-interval channels affinely onto configured ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeMap {
    pub ranges: Vec<(f64, f64)>,
}

impl Layer for RangeMap {
    fn forward(&mut self, x: &Tensor, _train: bool) -> Tensor {
        let mut y = x.clone();
        for (ch, &(lo, hi)) in self.ranges.iter().enumerate() {
            y.slice_mut(s![.., .., ch])
                .mapv_inplace(|v| lo + v * (hi - lo));
        }
        y
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut d = dy.clone();
        for (ch, &(lo, hi)) in self.ranges.iter().enumerate() {
            d.slice_mut(s![.., .., ch]).mapv_inplace(|v| v * (hi - lo));
        }
        d
    }
}
