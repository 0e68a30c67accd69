//! Compact bidirectional self-attention encoder with an explicit backward pass.
//!
//! Each block is post-norm: multi-head attention, residual, layer norm,
//! a GELU feed-forward, residual, layer norm. Positions are learned and
//! numbered continuously across sentence and context tokens.

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub ff_dim: usize,
    pub layers: usize,
    pub heads: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 64,
            ff_dim: 128,
            layers: 2,
            heads: 4,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.ff_dim == 0 || self.layers == 0 || self.heads == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
}

impl LayerParams {
    pub fn zeros(dim: usize, ff_dim: usize) -> Self {
        let m = |r, c| Array2::zeros((r, c));
        let v = |n| Array1::zeros(n);
        LayerParams {
            wq: m(dim, dim),
            bq: v(dim),
            wk: m(dim, dim),
            bk: v(dim),
            wv: m(dim, dim),
            bv: v(dim),
            wo: m(dim, dim),
            bo: v(dim),
            ln1_gain: v(dim),
            ln1_bias: v(dim),
            w1: m(dim, ff_dim),
            b1: v(ff_dim),
            w2: m(ff_dim, dim),
            b2: v(dim),
            ln2_gain: v(dim),
            ln2_bias: v(dim),
        }
    }

    fn init<R: Rng>(dim: usize, ff_dim: usize, rng: &mut R) -> Self {
        let mut p = LayerParams::zeros(dim, ff_dim);
        for w in [&mut p.wq, &mut p.wk, &mut p.wv, &mut p.wo, &mut p.w1, &mut p.w2] {
            let (fan_in, fan_out) = w.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.mapv_inplace(|_| rng.gen_range(-limit..limit));
        }
        p.ln1_gain.fill(1.0);
        p.ln2_gain.fill(1.0);
        p
    }

    pub fn named(&self) -> Vec<(&'static str, ArrayViewD<'_, f64>)> {
        vec![
            ("wq", self.wq.view().into_dyn()),
            ("bq", self.bq.view().into_dyn()),
            ("wk", self.wk.view().into_dyn()),
            ("bk", self.bk.view().into_dyn()),
            ("wv", self.wv.view().into_dyn()),
            ("bv", self.bv.view().into_dyn()),
            ("wo", self.wo.view().into_dyn()),
            ("bo", self.bo.view().into_dyn()),
            ("ln1_gain", self.ln1_gain.view().into_dyn()),
            ("ln1_bias", self.ln1_bias.view().into_dyn()),
            ("w1", self.w1.view().into_dyn()),
            ("b1", self.b1.view().into_dyn()),
            ("w2", self.w2.view().into_dyn()),
            ("b2", self.b2.view().into_dyn()),
            ("ln2_gain", self.ln2_gain.view().into_dyn()),
            ("ln2_bias", self.ln2_bias.view().into_dyn()),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, f64>)> {
        vec![
            ("wq", self.wq.view_mut().into_dyn()),
            ("bq", self.bq.view_mut().into_dyn()),
            ("wk", self.wk.view_mut().into_dyn()),
            ("bk", self.bk.view_mut().into_dyn()),
            ("wv", self.wv.view_mut().into_dyn()),
            ("bv", self.bv.view_mut().into_dyn()),
            ("wo", self.wo.view_mut().into_dyn()),
            ("bo", self.bo.view_mut().into_dyn()),
            ("ln1_gain", self.ln1_gain.view_mut().into_dyn()),
            ("ln1_bias", self.ln1_bias.view_mut().into_dyn()),
            ("w1", self.w1.view_mut().into_dyn()),
            ("b1", self.b1.view_mut().into_dyn()),
            ("w2", self.w2.view_mut().into_dyn()),
            ("b2", self.b2.view_mut().into_dyn()),
            ("ln2_gain", self.ln2_gain.view_mut().into_dyn()),
            ("ln2_bias", self.ln2_bias.view_mut().into_dyn()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub heads: usize,
    /// `V × d` token embeddings.
    pub embed: Array2<f64>,
    /// `max_len × d` learned positions.
    pub pos: Array2<f64>,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub fn zeros(config: &EncoderConfig, vocab_size: usize, max_len: usize) -> Self {
        EncoderParams {
            heads: config.heads,
            embed: Array2::zeros((vocab_size, config.dim)),
            pos: Array2::zeros((max_len, config.dim)),
            layers: (0..config.layers)
                .map(|_| LayerParams::zeros(config.dim, config.ff_dim))
                .collect(),
        }
    }

    /// Embeddings and positions uniform in `[-0.1, 0.1]`, Glorot-uniform
    /// projections, unit layer-norm gains, zero biases.
    pub fn init<R: Rng>(config: &EncoderConfig, vocab_size: usize, max_len: usize, rng: &mut R) -> Self {
        let mut p = EncoderParams::zeros(config, vocab_size, max_len);
        p.embed.mapv_inplace(|_| rng.gen_range(-0.1..0.1));
        p.pos.mapv_inplace(|_| rng.gen_range(-0.1..0.1));
        p.layers = (0..config.layers)
            .map(|_| LayerParams::init(config.dim, config.ff_dim, rng))
            .collect();
        p
    }

    pub fn dim(&self) -> usize {
        self.embed.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.nrows()
    }

    pub fn max_len(&self) -> usize {
        self.pos.nrows()
    }
}

/// Per-input gradient. Embedding rows are kept sparse: only the tokens that
/// occur in the input get an entry (possibly repeated).
#[derive(Debug, Clone)]
pub struct EncoderGrad {
    pub embed_rows: Vec<(usize, Array1<f64>)>,
    pub pos: Array2<f64>,
    pub layers: Vec<LayerParams>,
}

impl EncoderGrad {
    pub fn zeros_for(params: &EncoderParams) -> Self {
        let d = params.dim();
        let ff = params.layers.first().map_or(0, |l| l.b1.len());
        EncoderGrad {
            embed_rows: Vec::new(),
            pos: Array2::zeros(params.pos.dim()),
            layers: params.layers.iter().map(|_| LayerParams::zeros(d, ff)).collect(),
        }
    }
}

struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row *= *inv;
    }
    let out = &xhat * gain + bias;
    (out, LayerNormCache { xhat, inv_std })
}

/// Returns the input gradient; accumulates gain/bias gradients.
fn layer_norm_backward(
    dout: &Array2<f64>,
    cache: &LayerNormCache,
    gain: &Array1<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    *dgain += &(dout * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dout.sum_axis(Axis(0));
    let dxhat = dout * gain;
    let d = dout.ncols() as f64;
    let mut dx = Array2::zeros(dout.dim());
    for i in 0..dout.nrows() {
        let g = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let sum_g = g.sum();
        let sum_gx = g.dot(&xh);
        let inv = cache.inv_std[i];
        for j in 0..dout.ncols() {
            dx[[i, j]] = inv / d * (d * g[j] - sum_g - xh[j] * sum_gx);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

fn affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(w) + b
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

struct LayerTrace {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    context: Array2<f64>,
    ln1: LayerNormCache,
    hidden: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    ln2: LayerNormCache,
}

/// Intermediate values recorded by [`encode_traced`] for the backward pass.
pub struct EncoderTrace {
    ids: Vec<usize>,
    layers: Vec<LayerTrace>,
}

fn layer_forward(x: Array2<f64>, p: &LayerParams, heads: usize) -> (Array2<f64>, LayerTrace) {
    let n = x.nrows();
    let d = x.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = affine(&x, &p.wq, &p.bq);
    let k = affine(&x, &p.wk, &p.bk);
    let v = affine(&x, &p.wv, &p.bv);
    let mut context = Array2::zeros((n, d));
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut a);
        context.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
        attn.push(a);
    }
    let attended = &x + &affine(&context, &p.wo, &p.bo);
    let (hidden, ln1) = layer_norm(&attended, &p.ln1_gain, &p.ln1_bias);
    let ff_pre = affine(&hidden, &p.w1, &p.b1);
    let ff_act = ff_pre.mapv(gelu);
    let fed = &hidden + &affine(&ff_act, &p.w2, &p.b2);
    let (out, ln2) = layer_norm(&fed, &p.ln2_gain, &p.ln2_bias);
    let trace = LayerTrace {
        input: x,
        q,
        k,
        v,
        attn,
        context,
        ln1,
        hidden,
        ff_pre,
        ff_act,
        ln2,
    };
    (out, trace)
}

fn layer_backward(dout: &Array2<f64>, t: &LayerTrace, p: &LayerParams, g: &mut LayerParams) -> Array2<f64> {
    let heads = t.attn.len();
    let d = dout.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let dfed = layer_norm_backward(dout, &t.ln2, &p.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias);
    g.w2 += &t.ff_act.t().dot(&dfed);
    g.b2 += &dfed.sum_axis(Axis(0));
    let mut dff = dfed.dot(&p.w2.t());
    dff.zip_mut_with(&t.ff_pre, |dv, &x| *dv *= gelu_grad(x));
    g.w1 += &t.hidden.t().dot(&dff);
    g.b1 += &dff.sum_axis(Axis(0));
    let dhidden = dfed + dff.dot(&p.w1.t());

    let dattended = layer_norm_backward(&dhidden, &t.ln1, &p.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias);
    g.wo += &t.context.t().dot(&dattended);
    g.bo += &dattended.sum_axis(Axis(0));
    let dcontext = dattended.dot(&p.wo.t());

    let n = dout.nrows();
    let mut dq = Array2::zeros((n, d));
    let mut dk = Array2::zeros((n, d));
    let mut dv = Array2::zeros((n, d));
    for (h, a) in t.attn.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dctx = dcontext.slice(cols);
        let da = dctx.dot(&t.v.slice(cols).t());
        dv.slice_mut(cols).assign(&a.t().dot(&dctx));
        let mut ds = &da * a;
        let row_dot = ds.sum_axis(Axis(1));
        for (mut row, (a_row, dot)) in ds.rows_mut().into_iter().zip(a.rows().into_iter().zip(row_dot.iter())) {
            row.zip_mut_with(&a_row, |v, &av| *v -= av * dot);
        }
        ds *= scale;
        dq.slice_mut(cols).assign(&ds.dot(&t.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&t.q.slice(cols)));
    }
    g.wq += &t.input.t().dot(&dq);
    g.bq += &dq.sum_axis(Axis(0));
    g.wk += &t.input.t().dot(&dk);
    g.bk += &dk.sum_axis(Axis(0));
    g.wv += &t.input.t().dot(&dv);
    g.bv += &dv.sum_axis(Axis(0));
    dattended + dq.dot(&p.wq.t()) + dk.dot(&p.wk.t()) + dv.dot(&p.wv.t())
}

fn check_input(ids: &[usize], params: &EncoderParams) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::Empty("encoder input has no tokens".into()));
    }
    if ids.len() > params.max_len() {
        return Err(Error::TooLong(format!(
            "{} tokens exceed the positional table of {}",
            ids.len(),
            params.max_len()
        )));
    }
    if let Some(&id) = ids.iter().find(|&&id| id >= params.vocab_size()) {
        return Err(Error::TokenOutOfRange {
            id,
            size: params.vocab_size(),
        });
    }
    Ok(())
}

/// Encode token ids into `N × d` representations, recording a trace.
pub fn encode_traced(ids: &[usize], params: &EncoderParams) -> Result<(Array2<f64>, EncoderTrace)> {
    check_input(ids, params)?;
    let n = ids.len();
    let mut x = params.pos.slice(s![..n, ..]).to_owned();
    for (mut row, &id) in x.rows_mut().into_iter().zip(ids) {
        row += &params.embed.row(id);
    }
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (out, trace) = layer_forward(x, layer, params.heads);
        layers.push(trace);
        x = out;
    }
    Ok((
        x,
        EncoderTrace {
            ids: ids.to_vec(),
            layers,
        },
    ))
}

/// Encode without keeping a trace.
pub fn encode(ids: &[usize], params: &EncoderParams) -> Result<Array2<f64>> {
    encode_traced(ids, params).map(|(r, _)| r)
}

/// Reverse pass: gradient of a scalar loss given `∂loss/∂representations`.
pub fn backward(trace: &EncoderTrace, params: &EncoderParams, upstream: &Array2<f64>) -> Result<EncoderGrad> {
    if upstream.dim() != (trace.ids.len(), params.dim()) {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match encoder output ({}, {})",
            upstream.dim(),
            trace.ids.len(),
            params.dim()
        )));
    }
    let mut grad = EncoderGrad::zeros_for(params);
    let mut dx = upstream.clone();
    for ((t, p), g) in trace
        .layers
        .iter()
        .zip(&params.layers)
        .zip(grad.layers.iter_mut())
        .rev()
    {
        dx = layer_backward(&dx, t, p, g);
    }
    let n = trace.ids.len();
    grad.pos.slice_mut(s![..n, ..]).assign(&dx);
    grad.embed_rows = trace
        .ids
        .iter()
        .zip(dx.rows())
        .map(|(&id, row)| (id, row.to_owned()))
        .collect();
    Ok(grad)
}

/// Affine emission scores for the positions selected by `mask`.
pub fn emissions(
    representations: ArrayView2<f64>,
    mask: &[bool],
    weight: &Array2<f64>,
    bias: &Array1<f64>,
) -> Result<Array2<f64>> {
    if mask.len() != representations.nrows() {
        return Err(Error::Shape(format!(
            "mask of length {} for {} positions",
            mask.len(),
            representations.nrows()
        )));
    }
    if weight.nrows() != representations.ncols() || weight.ncols() != bias.len() {
        return Err(Error::Shape("projection does not match representation size".into()));
    }
    let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return Err(Error::Empty("mask selects no positions".into()));
    }
    Ok(representations.select(Axis(0), &rows).dot(weight) + bias)
}

/// Mean L2 distance between corresponding rows: `(1/n) Σ ‖r_i − r'_i‖`.
pub fn representation_distance(r: ArrayView2<f64>, r_prime: ArrayView2<f64>) -> Result<f64> {
    if r.dim() != r_prime.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", r.dim(), r_prime.dim())));
    }
    if r.nrows() == 0 {
        return Err(Error::Empty("no positions to compare".into()));
    }
    let total: f64 = r
        .rows()
        .into_iter()
        .zip(r_prime.rows())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
        .sum();
    Ok(total / r.nrows() as f64)
}
