//! Conditional ε-prediction network with a hand-written backward pass.
//!
//! Parameters live in one flat `Vec<f64>`; a [`Layout`] maps named tensors
//! onto ranges of it. The forward pass is
//!
//! ```text
//! tv   = silu(W_time · sinusoid(t) + b_time)
//! h_0  = W_in · x + b_in
//! u_k  = h_k + P_t,k · tv + P_c,k · c
//! h_k+1 = h_k + W2_k · relu(W1_k · u_k + b1_k) + b2_k
//! eps  = W_out · h_B + b_out
//! ```
//!
//! where `c` is the encoded condition (industry encoder output followed by
//! the board one-hot).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::condition::{Condition, ConditionVector, BOARD_SLOTS};
use crate::error::{check_len, Error, Result};
use crate::rng::{seeded, standard_normal};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Model input length `L`.
    pub window: usize,
    pub width: usize,
    pub blocks: usize,
    pub time_dim: usize,
    pub industries: usize,
    pub embed_dim: usize,
    pub cond_hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { window: 60, width: 64, blocks: 4, time_dim: 32, industries: 124, embed_dim: 16, cond_hidden: 128 }
    }
}

impl NetConfig {
    pub fn cond_dim(&self) -> usize {
        self.embed_dim + BOARD_SLOTS
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.window, self.width, self.time_dim, self.industries, self.embed_dim, self.cond_hidden];
        if dims.contains(&0) {
            return Err(Error::domain("network dimensions must be positive"));
        }
        if self.time_dim % 2 != 0 {
            return Err(Error::domain("time embedding width must be even"));
        }
        Ok(())
    }
}

/// Interleaved `[sin(t f_0), cos(t f_0), sin(t f_1), …]` with
/// `f_i = 10000^{−2i/dim}`.
pub fn time_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim % 2 != 0 {
        return Err(Error::domain(format!("time embedding width {dim} is odd")));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        let phase = t as f64 * freq;
        out.push(phase.sin());
        out.push(phase.cos());
    }
    Ok(out)
}

/// Affine map stored row-major (`out × inp`) followed by an optional bias.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dense {
    w: usize,
    b: Option<usize>,
    inp: usize,
    out: usize,
}

impl Dense {
    fn weights<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.w..self.w + self.inp * self.out]
    }

    /// `y = W x (+ b)`
    fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        let w = self.weights(p);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &w[o * self.inp..(o + 1) * self.inp];
            let mut acc: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            if let Some(b) = self.b {
                acc += p[b + o];
            }
            *yo = acc;
        }
    }

    /// `y += W x`
    fn forward_add(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        let w = self.weights(p);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &w[o * self.inp..(o + 1) * self.inp];
            *yo += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        if let Some(b) = self.b {
            for (o, yo) in y.iter_mut().enumerate() {
                *yo += p[b + o];
            }
        }
    }

    /// Accumulates parameter gradients into `g` and, if given, `Wᵀ dy` into `dx`.
    fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], g: &mut [f64], mut dx: Option<&mut [f64]>) {
        let w = self.weights(p);
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let base = self.w + o * self.inp;
            for (gw, xi) in g[base..base + self.inp].iter_mut().zip(x) {
                *gw += d * xi;
            }
            if let Some(dx) = dx.as_deref_mut() {
                for (dxi, wi) in dx.iter_mut().zip(&w[o * self.inp..(o + 1) * self.inp]) {
                    *dxi += wi * d;
                }
            }
        }
        if let Some(b) = self.b {
            for (gb, d) in g[b..b + self.out].iter_mut().zip(dy) {
                *gb += d;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Block {
    t_proj: Dense,
    c_proj: Dense,
    fc1: Dense,
    fc2: Dense,
}

/// Named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    embedding: usize,
    encoder: [Dense; 3],
    time: Dense,
    input: Dense,
    blocks: Vec<Block>,
    output: Dense,
    tensors: Vec<TensorSpec>,
    total: usize,
}

struct Allocator {
    next: usize,
    tensors: Vec<TensorSpec>,
}

impl Allocator {
    fn take(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.next;
        self.next += shape.iter().product::<usize>();
        self.tensors.push(TensorSpec { name, shape, offset });
        offset
    }

    fn dense(&mut self, name: &str, inp: usize, out: usize, bias: bool) -> Dense {
        let w = self.take(format!("{name}.weight"), vec![out, inp]);
        let b = bias.then(|| self.take(format!("{name}.bias"), vec![out]));
        Dense { w, b, inp, out }
    }
}

impl Layout {
    pub(crate) fn new(cfg: &NetConfig) -> Self {
        let mut a = Allocator { next: 0, tensors: Vec::new() };
        let embedding = a.take("industry_embedding".into(), vec![cfg.industries, cfg.embed_dim]);
        let encoder = [
            a.dense("cond_encoder.0", cfg.embed_dim, cfg.cond_hidden, true),
            a.dense("cond_encoder.1", cfg.cond_hidden, cfg.cond_hidden, true),
            a.dense("cond_encoder.2", cfg.cond_hidden, cfg.embed_dim, true),
        ];
        let time = a.dense("time_mlp", cfg.time_dim, cfg.width, true);
        let input = a.dense("input", cfg.window, cfg.width, true);
        let blocks = (0..cfg.blocks)
            .map(|k| Block {
                t_proj: a.dense(&format!("blocks.{k}.time_proj"), cfg.width, cfg.width, false),
                c_proj: a.dense(&format!("blocks.{k}.cond_proj"), cfg.cond_dim(), cfg.width, false),
                fc1: a.dense(&format!("blocks.{k}.fc1"), cfg.width, cfg.width, true),
                fc2: a.dense(&format!("blocks.{k}.fc2"), cfg.width, cfg.width, true),
            })
            .collect();
        let output = a.dense("output", cfg.width, cfg.window, true);
        Self { embedding, encoder, time, input, blocks, output, total: a.next, tensors: a.tensors }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Weights of the conditional ε-prediction network.
#[derive(Debug, Clone)]
pub struct ScoreNetworkParams {
    config: NetConfig,
    layout: Layout,
    values: Vec<f64>,
}

impl PartialEq for ScoreNetworkParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.values == other.values
    }
}

struct EncoderCache {
    row: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
}

struct Tape {
    tv_pre: Vec<f64>,
    tv: Vec<f64>,
    te: Vec<f64>,
    u: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    h_final: Vec<f64>,
}

impl ScoreNetworkParams {
    /// Random initialization: embedding rows `N(0, 1)`, weights
    /// `N(0, 1/fan_in)`, zero biases.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut values = vec![0.0; layout.total];
        let mut rng = seeded(seed);
        for spec in &layout.tensors {
            // a zero output layer starts training from ε̂ = 0
            let scale = if spec.name == "industry_embedding" {
                1.0
            } else if spec.name.ends_with(".bias") || spec.name == "output.weight" {
                0.0
            } else {
                1.0 / (spec.shape[1] as f64).sqrt()
            };
            if scale > 0.0 {
                for v in &mut values[spec.offset..spec.offset + spec.len()] {
                    *v = scale * standard_normal(&mut rng);
                }
            }
        }
        Ok(Self { config, layout, values })
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let values = vec![0.0; layout.total];
        Ok(Self { config, layout, values })
    }

    pub fn from_values(config: NetConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        check_len(layout.total, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector contains non-finite values".into()));
        }
        Ok(Self { config, layout, values })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.layout.tensors
    }

    fn encoder_forward(&self, industry: usize) -> (Vec<f64>, EncoderCache) {
        let cfg = &self.config;
        let p = &self.values;
        let start = self.layout.embedding + industry * cfg.embed_dim;
        let row = p[start..start + cfg.embed_dim].to_vec();
        let [e0, e1, e2] = &self.layout.encoder;
        let mut z1 = vec![0.0; cfg.cond_hidden];
        e0.forward(p, &row, &mut z1);
        let a1: Vec<f64> = z1.iter().map(|&v| silu(v)).collect();
        let mut z2 = vec![0.0; cfg.cond_hidden];
        e1.forward(p, &a1, &mut z2);
        let a2: Vec<f64> = z2.iter().map(|&v| silu(v)).collect();
        let mut out = vec![0.0; cfg.embed_dim];
        e2.forward(p, &a2, &mut out);
        (out, EncoderCache { row, z1, a1, z2, a2 })
    }

    fn encoder_backward(&self, industry: usize, cache: &EncoderCache, d_out: &[f64], g: &mut [f64]) {
        let cfg = &self.config;
        let p = &self.values;
        let [e0, e1, e2] = &self.layout.encoder;
        let mut da2 = vec![0.0; cfg.cond_hidden];
        e2.backward(p, &cache.a2, d_out, g, Some(&mut da2));
        let dz2: Vec<f64> = da2.iter().zip(&cache.z2).map(|(d, &z)| d * silu_grad(z)).collect();
        let mut da1 = vec![0.0; cfg.cond_hidden];
        e1.backward(p, &cache.a1, &dz2, g, Some(&mut da1));
        let dz1: Vec<f64> = da1.iter().zip(&cache.z1).map(|(d, &z)| d * silu_grad(z)).collect();
        let mut drow = vec![0.0; cfg.embed_dim];
        e0.backward(p, &cache.row, &dz1, g, Some(&mut drow));
        let start = self.layout.embedding + industry * cfg.embed_dim;
        for (gi, d) in g[start..start + cfg.embed_dim].iter_mut().zip(drow) {
            *gi += d;
        }
    }

    /// Encodes a condition; `Null` maps to the all-zero vector.
    pub fn encode_condition(&self, condition: &Condition) -> Result<ConditionVector> {
        let dim = self.config.cond_dim();
        match *condition {
            Condition::Null => Ok(ConditionVector { condition: *condition, encoded: vec![0.0; dim] }),
            Condition::Labels { industry, board } => {
                condition.validate(self.config.industries)?;
                let (mut encoded, _) = self.encoder_forward(industry);
                encoded.resize(dim, 0.0);
                encoded[self.config.embed_dim + board] = 1.0;
                Ok(ConditionVector { condition: *condition, encoded })
            }
        }
    }

    fn forward_tape(&self, x: &[f64], t: usize, c: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let cfg = &self.config;
        check_len(cfg.window, x.len())?;
        check_len(cfg.cond_dim(), c.len())?;
        let p = &self.values;
        let te = time_embedding(t, cfg.time_dim)?;
        let mut tv_pre = vec![0.0; cfg.width];
        self.layout.time.forward(p, &te, &mut tv_pre);
        let tv: Vec<f64> = tv_pre.iter().map(|&v| silu(v)).collect();

        let mut h = vec![0.0; cfg.width];
        self.layout.input.forward(p, x, &mut h);
        let nb = self.layout.blocks.len();
        let mut tape = Tape {
            tv_pre,
            tv,
            te,
            u: Vec::with_capacity(nb),
            z: Vec::with_capacity(nb),
            a: Vec::with_capacity(nb),
            h_final: Vec::new(),
        };
        for block in &self.layout.blocks {
            let mut u = h.clone();
            block.t_proj.forward_add(p, &tape.tv, &mut u);
            block.c_proj.forward_add(p, c, &mut u);
            let mut z = vec![0.0; cfg.width];
            block.fc1.forward(p, &u, &mut z);
            let a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            let mut next = h.clone();
            block.fc2.forward_add(p, &a, &mut next);
            tape.u.push(u);
            tape.z.push(z);
            tape.a.push(a);
            h = next;
        }
        let mut out = vec![0.0; cfg.window];
        self.layout.output.forward(p, &h, &mut out);
        tape.h_final = h;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("network output at step {t}")));
        }
        Ok((out, tape))
    }

    /// Predicted noise for `x` at step `t` under an encoded condition.
    pub fn predict_eps(&self, x: &[f64], t: usize, c: &ConditionVector) -> Result<Vec<f64>> {
        Ok(self.forward_tape(x, t, &c.encoded)?.0)
    }

    /// Backpropagates `d_out` (gradient of some scalar with respect to the
    /// predicted noise) into the parameter gradient `g`, through the
    /// condition encoder and embedding table. Returns the forward output.
    pub fn eps_vjp(&self, x: &[f64], t: usize, condition: &Condition, d_out: &[f64], g: &mut [f64]) -> Result<Vec<f64>> {
        check_len(self.config.window, d_out.len())?;
        self.backprop(x, t, condition, g, |_| d_out.to_vec())
    }

    /// Like [`eps_vjp`](Self::eps_vjp), with the upstream gradient computed
    /// from the forward output.
    pub fn backprop<F>(&self, x: &[f64], t: usize, condition: &Condition, g: &mut [f64], upstream: F) -> Result<Vec<f64>>
    where
        F: FnOnce(&[f64]) -> Vec<f64>,
    {
        check_len(self.len(), g.len())?;
        let cfg = &self.config;
        let (c, enc_cache) = match *condition {
            Condition::Null => (vec![0.0; cfg.cond_dim()], None),
            Condition::Labels { industry, board } => {
                condition.validate(cfg.industries)?;
                let (mut c, cache) = self.encoder_forward(industry);
                c.resize(cfg.cond_dim(), 0.0);
                c[cfg.embed_dim + board] = 1.0;
                (c, Some((industry, cache)))
            }
        };
        let (out, tape) = self.forward_tape(x, t, &c)?;
        let d_out = upstream(&out);
        check_len(cfg.window, d_out.len())?;
        let p = &self.values;

        let mut dh = vec![0.0; cfg.width];
        self.layout.output.backward(p, &tape.h_final, &d_out, g, Some(&mut dh));
        let mut dtv = vec![0.0; cfg.width];
        let mut dc = vec![0.0; cfg.cond_dim()];
        for (k, block) in self.layout.blocks.iter().enumerate().rev() {
            let mut da = vec![0.0; cfg.width];
            block.fc2.backward(p, &tape.a[k], &dh, g, Some(&mut da));
            let dz: Vec<f64> = da.iter().zip(&tape.z[k]).map(|(d, &z)| if z > 0.0 { *d } else { 0.0 }).collect();
            let mut du = vec![0.0; cfg.width];
            block.fc1.backward(p, &tape.u[k], &dz, g, Some(&mut du));
            block.t_proj.backward(p, &tape.tv, &du, g, Some(&mut dtv));
            block.c_proj.backward(p, &c, &du, g, Some(&mut dc));
            for (dhi, dui) in dh.iter_mut().zip(&du) {
                *dhi += dui;
            }
        }
        self.layout.input.backward(p, x, &dh, g, None);
        let dtv_pre: Vec<f64> = dtv.iter().zip(&tape.tv_pre).map(|(d, &z)| d * silu_grad(z)).collect();
        self.layout.time.backward(p, &tape.te, &dtv_pre, g, None);

        if let Some((industry, cache)) = enc_cache {
            self.encoder_backward(industry, &cache, &dc[..cfg.embed_dim], g);
        }
        Ok(out)
    }

    /// Draws fresh standard normal noise of the model's input length.
    pub fn noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.config.window).map(|_| standard_normal(rng)).collect()
    }
}
