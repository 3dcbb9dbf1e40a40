//! Network assembly for the five ablation variants.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{
    Attention, BiLstm, ConvBlock, Dense, Dropout, Layer, Lstm, MaxPool, RangeMap, RepeatLast,
    SigmoidHead, Tensor,
};
use crate::param::Param;
use crate::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ablation {
    /// Full network.
    C1,
    /// No dilated convolution branch.
    C2,
    /// No attention; the last encoder state is repeated.
    C3,
    /// C2 and C3 combined.
    C4,
    /// Unidirectional recurrent encoder and decoder only.
    C5,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::C1,
        Ablation::C2,
        Ablation::C3,
        Ablation::C4,
        Ablation::C5,
    ];

    pub fn dilated(self) -> bool {
        matches!(self, Ablation::C1 | Ablation::C3)
    }

    pub fn attention(self) -> bool {
        matches!(self, Ablation::C1 | Ablation::C2)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Ablation {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| NnError::Config(format!("unknown ablation `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub ablation: Ablation,
    pub features: usize,
    pub input_steps: usize,
    pub output_steps: usize,
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
    pub dilation: usize,
    pub pool: usize,
    pub dropout: f64,
    /// Units per LSTM direction. The unidirectional variant uses twice this.
    pub lstm_units: usize,
    /// Width of the dense layer after the encoder and of the attention keys.
    pub encoder_dense: usize,
    pub omega: f64,
    pub dense: Vec<usize>,
    pub l2: f64,
    pub head_lat: (f64, f64),
    pub head_lon: (f64, f64),
    pub seed: u64,
}

impl ModelConfig {
    /// Full-size hyperparameters.
    pub fn full(features: usize, ablation: Ablation) -> Self {
        ModelConfig {
            ablation,
            features,
            input_steps: 19,
            output_steps: 72,
            filters: vec![256, 256, 128],
            kernels: vec![7, 5, 5],
            dilation: 2,
            pool: 2,
            dropout: 0.1,
            lstm_units: 64,
            encoder_dense: 128,
            omega: 0.25,
            dense: vec![128, 128, 64],
            l2: 0.0005,
            head_lat: (-68.0, 45.0),
            head_lon: (-58.0, 50.0),
            seed: 0,
        }
    }

    /// Same topology at widths small enough for quick CPU runs.
    pub fn toy(features: usize, ablation: Ablation) -> Self {
        ModelConfig {
            filters: vec![16, 16, 8],
            kernels: vec![3, 3, 3],
            lstm_units: 8,
            encoder_dense: 16,
            dense: vec![16, 16, 8],
            ..Self::full(features, ablation)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if self.features == 0 || self.input_steps == 0 || self.output_steps == 0 {
            return bad("features and step counts must be positive");
        }
        if self.filters.len() != self.kernels.len() {
            return bad("filters and kernels must have the same length");
        }
        if self
            .filters
            .iter()
            .chain(&self.kernels)
            .chain(&self.dense)
            .any(|&d| d == 0)
        {
            return bad("layer widths must be positive");
        }
        if self.dilation == 0 || self.pool == 0 || self.lstm_units == 0 || self.encoder_dense == 0 {
            return bad("dilation, pool and unit counts must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.omega >= 0.0) {
            return bad("omega must be non-negative");
        }
        if !(self.l2 >= 0.0) {
            return bad("l2 must be non-negative");
        }
        for (lo, hi) in [self.head_lat, self.head_lon] {
            if !(lo < hi) {
                return bad("output ranges must be increasing");
            }
        }
        if self.ablation != Ablation::C5 {
            let mut t = self.input_steps;
            for _ in &self.filters {
                t = MaxPool::new(self.pool).output_len(t).ok_or_else(|| {
                    NnError::Config(format!(
                        "{} input steps too short for {} pooled blocks",
                        self.input_steps,
                        self.filters.len()
                    ))
                })?;
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
enum Encoder {
    Bi(BiLstm),
    Uni(Lstm),
}

#[derive(Debug)]
enum Bridge {
    Attention(Attention),
    Repeat(RepeatLast),
}

/// The forecasting network: `(b, input_steps, features)` in, `(b, output_steps, 2)`
/// unit-interval `(lat, lon)` out.
#[derive(Debug)]
pub struct Model {
    pub config: ModelConfig,
    blocks: Vec<ConvBlock>,
    dropout: Dropout,
    encoder: Encoder,
    encoder_dense: Option<Dense>,
    bridge: Bridge,
    decoder: Encoder,
    dense: Vec<Dense>,
    head: SigmoidHead,
}

macro_rules! dispatch {
    ($e:expr, $x:ident => $body:expr) => {
        match $e {
            Encoder::Bi($x) => $body,
            Encoder::Uni($x) => $body,
        }
    };
}

macro_rules! bridge {
    ($e:expr, $x:ident => $body:expr) => {
        match $e {
            Bridge::Attention($x) => $body,
            Bridge::Repeat($x) => $body,
        }
    };
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = &config;
        let mut blocks = Vec::new();
        let mut width = c.features;
        let (encoder, encoder_dense, bridge, decoder, dec_width);
        if c.ablation == Ablation::C5 {
            let u = 2 * c.lstm_units;
            encoder = Encoder::Uni(Lstm::new("encoder", width, u, false, &mut rng));
            encoder_dense = None;
            bridge = Bridge::Repeat(RepeatLast::new(c.output_steps));
            decoder = Encoder::Uni(Lstm::new("decoder", u, u, false, &mut rng));
            dec_width = u;
        } else {
            for (i, (&f, &k)) in c.filters.iter().zip(&c.kernels).enumerate() {
                blocks.push(ConvBlock::new(
                    &format!("block{i}"),
                    width,
                    f,
                    k,
                    c.dilation,
                    c.pool,
                    c.ablation.dilated(),
                    &mut rng,
                ));
                width = f;
            }
            encoder = Encoder::Bi(BiLstm::new("encoder", width, c.lstm_units, &mut rng));
            encoder_dense = Some(Dense::new(
                "encoder.dense",
                c.lstm_units,
                c.encoder_dense,
                true,
                &mut rng,
            ));
            bridge = if c.ablation.attention() {
                Bridge::Attention(Attention::new(
                    "attention",
                    c.encoder_dense,
                    c.omega,
                    c.output_steps,
                    &mut rng,
                ))
            } else {
                Bridge::Repeat(RepeatLast::new(c.output_steps))
            };
            decoder = Encoder::Bi(BiLstm::new(
                "decoder",
                c.encoder_dense,
                c.lstm_units,
                &mut rng,
            ));
            dec_width = c.lstm_units;
        }
        let mut dense = Vec::new();
        let mut w = dec_width;
        for (i, &d) in c.dense.iter().enumerate() {
            dense.push(Dense::new(&format!("dense{i}"), w, d, true, &mut rng));
            w = d;
        }
        let head = SigmoidHead::new("head", w, 2, &mut rng);
        // Dropout draws from its own stream so masks do not shift initialisation.
        let dropout = Dropout::new(c.dropout, c.seed ^ 0x5eed_d50f);
        Ok(Model {
            config,
            blocks,
            dropout,
            encoder,
            encoder_dense,
            bridge,
            decoder,
            dense,
            head,
        })
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (_, t, f) = x.dim();
        if f != self.config.features || t != self.config.input_steps {
            return Err(NnError::Shape(format!(
                "expected (_, {}, {}) input, got (_, {t}, {f})",
                self.config.input_steps, self.config.features
            )));
        }
        let mut h = x.clone();
        for b in &mut self.blocks {
            h = b.forward(&h, train);
        }
        if !self.blocks.is_empty() {
            h = self.dropout.forward(&h, train);
        }
        h = dispatch!(&mut self.encoder, l => l.forward(&h, train));
        if let Some(d) = &mut self.encoder_dense {
            h = d.forward(&h, train);
        }
        h = bridge!(&mut self.bridge, l => l.forward(&h, train));
        h = dispatch!(&mut self.decoder, l => l.forward(&h, train));
        for d in &mut self.dense {
            h = d.forward(&h, train);
        }
        let y = self.head.forward(&h, train);
        if cfg!(debug_assertions) && y.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("forward output"));
        }
        Ok(y)
    }

    /// Back-propagates `dy` (gradient of the loss w.r.t. the last forward output).
    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut d = self.head.backward(dy);
        for l in self.dense.iter_mut().rev() {
            d = l.backward(&d);
        }
        d = dispatch!(&mut self.decoder, l => l.backward(&d));
        d = bridge!(&mut self.bridge, l => l.backward(&d));
        if let Some(l) = &mut self.encoder_dense {
            d = l.backward(&d);
        }
        d = dispatch!(&mut self.encoder, l => l.backward(&d));
        if !self.blocks.is_empty() {
            d = self.dropout.backward(&d);
        }
        for b in self.blocks.iter_mut().rev() {
            d = b.backward(&d);
        }
        d
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.blocks.iter().flat_map(|b| b.params()).collect();
        v.extend(dispatch!(&self.encoder, l => l.params()));
        if let Some(d) = &self.encoder_dense {
            v.extend(d.params());
        }
        v.extend(bridge!(&self.bridge, l => l.params()));
        v.extend(dispatch!(&self.decoder, l => l.params()));
        v.extend(self.dense.iter().flat_map(|d| d.params()));
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self
            .blocks
            .iter_mut()
            .flat_map(|b| b.params_mut())
            .collect();
        v.extend(dispatch!(&mut self.encoder, l => l.params_mut()));
        if let Some(d) = &mut self.encoder_dense {
            v.extend(d.params_mut());
        }
        v.extend(bridge!(&mut self.bridge, l => l.params_mut()));
        v.extend(dispatch!(&mut self.decoder, l => l.params_mut()));
        v.extend(self.dense.iter_mut().flat_map(|d| d.params_mut()));
        v.extend(self.head.params_mut());
        v
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Batch-norm running statistics as `(name, values)` pairs.
    pub fn buffers(&self) -> Vec<(String, &Vec<f64>)> {
        let mut out = Vec::new();
        for b in &self.blocks {
            for br in std::iter::once(&b.plain).chain(b.dilated.as_ref()) {
                let n = &br.norm.gamma.name;
                let base = n.trim_end_matches(".gamma");
                out.push((format!("{base}.running_mean"), &br.norm.running_mean));
                out.push((format!("{base}.running_var"), &br.norm.running_var));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            let ConvBlock { plain, dilated } = b;
            for br in std::iter::once(plain).chain(dilated.as_mut()) {
                out.push(&mut br.norm.running_mean);
                out.push(&mut br.norm.running_var);
            }
        }
        out
    }

    /// Attention weights of the last forward pass, if the variant has attention.
    pub fn attention_weights(&self) -> Option<&Tensor> {
        match &self.bridge {
            Bridge::Attention(a) => a.weights(),
            Bridge::Repeat(_) => None,
        }
    }

    /// Maps unit-interval outputs to `(lat, lon)` in the configured ranges.
    pub fn decode(&self, y: &Tensor) -> Tensor {
        RangeMap {
            ranges: vec![self.config.head_lat, self.config.head_lon],
        }
        .forward(y, false)
    }

    /// Forward in inference mode over mini-batches, decoded to degrees.
    pub fn predict(&mut self, x: &Tensor, batch: usize) -> Result<Tensor> {
        let n = x.dim().0;
        let mut out = Tensor::zeros((n, self.config.output_steps, 2));
        let mut start = 0;
        while start < n {
            let end = (start + batch.max(1)).min(n);
            let y = self.forward(&x.slice(ndarray::s![start..end, .., ..]).to_owned(), false)?;
            out.slice_mut(ndarray::s![start..end, .., ..])
                .assign(&self.decode(&y));
            start = end;
        }
        Ok(out)
    }
}

impl Layer for Model {
    /// Panics on a shape mismatch; use [`Model::forward`] for a checked call.
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        Model::forward(self, x, train).expect("model forward")
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        Model::backward(self, dy)
    }

    fn params(&self) -> Vec<&Param> {
        Model::params(self)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Model::params_mut(self)
    }
}
