//! Step-conditioned velocity network `f(x, t, dt, y)`.
//!
//! Each spectrogram frame is processed independently together with a small
//! window of neighbouring frames. Real and imaginary parts of the state `x`
//! and the observation `y`, plus their log-power, are flattened into one
//! feature vector, the
//! sinusoidal embeddings of `t` and `dt` are appended, and the result passes
//! through an input projection, a stack of residual blocks (each re-injecting
//! the time/step embedding) and two zero-initialized output heads: an
//! additive field `a` and per-bin complex gains `gx`, `gy` applied to the
//! centre frame, giving `a + gx * x + gy * y`.
//! Gradients are computed by a hand-written reverse pass over a recorded tape.

mod adam;
mod embed;

pub use adam::AdamState;
pub use embed::{step_coordinate, TimeEmbedding};

use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectro::Bins;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Frequency bins per frame.
    pub bins: usize,
    /// Neighbouring frames seen on each side.
    pub context: usize,
    pub hidden: usize,
    pub blocks: usize,
    /// Width of each of the two sinusoidal embeddings (t and dt).
    pub embed_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            bins: 129,
            context: 1,
            hidden: 128,
            blocks: 3,
            embed_dim: 16,
        }
    }
}

impl NetConfig {
    /// Per context frame: re/im of `x` and `y`, then log-power of each.
    fn slot_width(&self) -> usize {
        6 * self.bins
    }

    pub fn frame_features(&self) -> usize {
        self.slot_width() * (2 * self.context + 1)
    }

    pub fn cond_dim(&self) -> usize {
        2 * self.embed_dim
    }

    pub fn input_dim(&self) -> usize {
        self.frame_features() + self.cond_dim()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.bins
    }

    fn gate_dim(&self) -> usize {
        4 * self.bins
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 || self.hidden == 0 || self.blocks == 0 {
            return Err(Error::Config(format!(
                "bins, hidden and blocks must be positive: {self:?}"
            )));
        }
        if self.embed_dim < 2 || !self.embed_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "embed_dim must be even and >= 2, got {}",
                self.embed_dim
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    offset: usize,
    rows: usize,
    cols: usize,
}

impl Slot {
    fn len(&self) -> usize {
        self.rows * self.cols
    }

    fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone)]
struct BlockSlots {
    w1: Slot,
    b1: Slot,
    u: Slot,
    w2: Slot,
    b2: Slot,
}

#[derive(Debug, Clone)]
struct Layout {
    w_in: Slot,
    b_in: Slot,
    blocks: Vec<BlockSlots>,
    w_out: Slot,
    b_out: Slot,
    w_gate: Slot,
    b_gate: Slot,
    total: usize,
}

impl Layout {
    fn new(c: &NetConfig) -> Self {
        let mut offset = 0;
        let mut slot = |rows: usize, cols: usize| {
            let s = Slot { offset, rows, cols };
            offset += rows * cols;
            s
        };
        let h = c.hidden;
        let w_in = slot(c.input_dim(), h);
        let b_in = slot(1, h);
        let blocks = (0..c.blocks)
            .map(|_| BlockSlots {
                w1: slot(h, h),
                b1: slot(1, h),
                u: slot(c.cond_dim(), h),
                w2: slot(h, h),
                b2: slot(1, h),
            })
            .collect();
        let w_out = slot(h, c.output_dim());
        let b_out = slot(1, c.output_dim());
        let w_gate = slot(h, c.gate_dim());
        let b_gate = slot(1, c.gate_dim());
        Layout {
            w_in,
            b_in,
            blocks,
            w_out,
            b_out,
            w_gate,
            b_gate,
            total: offset,
        }
    }
}

/// One network evaluation request: state `x` and observation `y` share the
/// `[bins, frames]` shape.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub x: &'a Bins,
    pub y: &'a Bins,
    pub t: f64,
    pub dt: f64,
}

/// Anything that maps `(x, t, dt, y)` to a velocity-scale field.
pub trait VelocityField {
    fn eval_batch(&self, queries: &[Query<'_>]) -> Result<Vec<Bins>>;

    fn eval(&self, x: &Bins, t: f64, dt: f64, y: &Bins) -> Result<Bins> {
        let mut out = self.eval_batch(&[Query { x, y, t, dt }])?;
        Ok(out.pop().expect("one query yields one output"))
    }
}

#[derive(Debug, Clone)]
struct Tape {
    input: Array2<f64>,
    cond: Array2<f64>,
    pre_in: Array2<f64>,
    block_in: Vec<Array2<f64>>,
    block_pre: Vec<Array2<f64>>,
    block_act: Vec<Array2<f64>>,
    last: Array2<f64>,
    frames: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct VelocityNet {
    config: NetConfig,
    embedding: TimeEmbedding,
    layout: Layout,
    params: Vec<f64>,
    grad: Vec<f64>,
    tape: Option<Tape>,
}

fn log_power(v: Complex64) -> f64 {
    0.1 * (v.norm_sqr() + 1e-6).ln()
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

impl VelocityNet {
    /// Random hidden layers and a zero output layer, so the fresh network
    /// predicts zero displacement everywhere.
    pub fn new(config: NetConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        net.init_hidden(rng);
        Ok(net)
    }

    /// Every layer random, including the output heads.
    pub fn new_random(config: NetConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::new(config, rng)?;
        let l = &net.layout;
        let ranges = [l.w_out.range(), l.b_out.range(), l.w_gate.range(), l.b_gate.range()];
        let std = 1.0 / (config.hidden as f64).sqrt();
        for i in ranges.into_iter().flatten() {
            let z: f64 = StandardNormal.sample(rng);
            net.params[i] = std * z;
        }
        Ok(net)
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        Ok(Self {
            config,
            embedding: TimeEmbedding::new(config.embed_dim),
            params: vec![0.0; layout.total],
            grad: vec![0.0; layout.total],
            layout,
            tape: None,
        })
    }

    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        if params.len() != net.params.len() {
            return Err(Error::Format(format!(
                "parameter vector has {} entries, architecture needs {}",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    fn init_hidden(&mut self, rng: &mut impl Rng) {
        let c = self.config;
        let mut fill = |params: &mut [f64], slot: Slot, std: f64| {
            for p in &mut params[slot.range()] {
                let z: f64 = StandardNormal.sample(rng);
                *p = std * z;
            }
        };
        let h = c.hidden as f64;
        fill(&mut self.params, self.layout.w_in, 1.0 / (c.input_dim() as f64).sqrt());
        for b in &self.layout.blocks {
            fill(&mut self.params, b.w1, 1.0 / h.sqrt());
            fill(&mut self.params, b.u, 1.0 / (c.cond_dim() as f64).sqrt());
            fill(&mut self.params, b.w2, 0.5 / h.sqrt());
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn embedding(&self) -> &TimeEmbedding {
        &self.embedding
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub(crate) fn params_and_grad_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.params, &mut self.grad)
    }

    /// Output bias as `[re(bins), im(bins)]`; setting it on a zero network
    /// yields a state-independent constant field.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let r = self.layout.b_out.range();
        &mut self.params[r]
    }

    /// Named parameter ranges, one per weight or bias tensor.
    pub fn param_groups(&self) -> Vec<(String, Range<usize>)> {
        let l = &self.layout;
        let mut groups = vec![
            ("input.weight".to_string(), l.w_in.range()),
            ("input.bias".to_string(), l.b_in.range()),
        ];
        for (i, b) in l.blocks.iter().enumerate() {
            groups.push((format!("block{i}.w1"), b.w1.range()));
            groups.push((format!("block{i}.b1"), b.b1.range()));
            groups.push((format!("block{i}.cond"), b.u.range()));
            groups.push((format!("block{i}.w2"), b.w2.range()));
            groups.push((format!("block{i}.b2"), b.b2.range()));
        }
        groups.push(("output.weight".to_string(), l.w_out.range()));
        groups.push(("output.bias".to_string(), l.b_out.range()));
        groups.push(("gate.weight".to_string(), l.w_gate.range()));
        groups.push(("gate.bias".to_string(), l.b_gate.range()));
        groups
    }

    fn mat(&self, s: Slot) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((s.rows, s.cols), &self.params[s.range()]).expect("slot shape")
    }

    fn vec(&self, s: Slot) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[s.range()])
    }

    fn check(&self, q: &Query<'_>) -> Result<()> {
        let bins = self.config.bins;
        if q.x.dim() != q.y.dim() || q.x.nrows() != bins || q.x.ncols() == 0 {
            return Err(Error::Contract(format!(
                "state {:?} and observation {:?} must both be [{bins}, frames>0]",
                q.x.dim(),
                q.y.dim()
            )));
        }
        if !(0.0..=1.0).contains(&q.t) {
            return Err(Error::Contract(format!("time {} outside [0, 1]", q.t)));
        }
        if !(q.dt > 0.0 && q.dt <= 1.0) {
            return Err(Error::Contract(format!("step size {} outside (0, 1]", q.dt)));
        }
        Ok(())
    }

    fn assemble(&self, queries: &[Query<'_>]) -> Result<(Array2<f64>, Array2<f64>, Vec<usize>)> {
        for q in queries {
            self.check(q)?;
        }
        let c = &self.config;
        let rows: usize = queries.iter().map(|q| q.x.ncols()).sum();
        let ff = c.frame_features();
        let e = c.embed_dim;
        let mut input = Array2::<f64>::zeros((rows, c.input_dim()));
        let mut cond = Array2::<f64>::zeros((rows, c.cond_dim()));
        let mut frames = Vec::with_capacity(queries.len());
        let mut row = 0;
        let ctx = c.context as isize;
        for q in queries {
            let t_frames = q.x.ncols();
            frames.push(t_frames);
            let mut cond_row = vec![0.0; 2 * e];
            self.embedding.embed_into(q.t, &mut cond_row[..e]);
            self.embedding.embed_into(step_coordinate(q.dt), &mut cond_row[e..]);
            for j in 0..t_frames {
                let mut r = input.row_mut(row);
                let feats = r.as_slice_mut().expect("row-major");
                for (slot, o) in (-ctx..=ctx).enumerate() {
                    let col = j as isize + o;
                    if col < 0 || col >= t_frames as isize {
                        continue;
                    }
                    let col = col as usize;
                    let base = slot * c.slot_width();
                    for k in 0..c.bins {
                        let xv = q.x[[k, col]];
                        let yv = q.y[[k, col]];
                        feats[base + k] = xv.re;
                        feats[base + c.bins + k] = xv.im;
                        feats[base + 2 * c.bins + k] = yv.re;
                        feats[base + 3 * c.bins + k] = yv.im;
                        feats[base + 4 * c.bins + k] = log_power(xv);
                        feats[base + 5 * c.bins + k] = log_power(yv);
                    }
                }
                feats[ff..].copy_from_slice(&cond_row);
                cond.row_mut(row)
                    .as_slice_mut()
                    .expect("row-major")
                    .copy_from_slice(&cond_row);
                row += 1;
            }
        }
        Ok((input, cond, frames))
    }

    fn run(&self, input: Array2<f64>, cond: Array2<f64>, frames: Vec<usize>, record: bool) -> (Array2<f64>, Option<Tape>) {
        let l = &self.layout;
        let mut pre_in = input.dot(&self.mat(l.w_in));
        pre_in += &self.vec(l.b_in);
        let mut h = pre_in.mapv(silu);
        let mut block_in = Vec::new();
        let mut block_pre = Vec::new();
        let mut block_act = Vec::new();
        for b in &l.blocks {
            let mut p = h.dot(&self.mat(b.w1));
            general_mat_mul(1.0, &cond, &self.mat(b.u), 1.0, &mut p);
            p += &self.vec(b.b1);
            let q = p.mapv(silu);
            let mut next = h.clone();
            general_mat_mul(1.0, &q, &self.mat(b.w2), 1.0, &mut next);
            next += &self.vec(b.b2);
            if record {
                block_in.push(std::mem::replace(&mut h, next));
                block_pre.push(p);
                block_act.push(q);
            } else {
                h = next;
            }
        }
        let mut out = h.dot(&self.mat(l.w_out));
        out += &self.vec(l.b_out);
        let mut gate = h.dot(&self.mat(l.w_gate));
        gate += &self.vec(l.b_gate);
        self.apply_gates(&mut out, &gate, &input);
        let tape = record.then(|| Tape {
            input,
            cond,
            pre_in,
            block_in,
            block_pre,
            block_act,
            last: h,
            frames,
        });
        (out, tape)
    }

    /// Centre-frame `[x.re, x.im, y.re, y.im]` features of one input row.
    fn centre<'r>(&self, input_row: &'r [f64]) -> &'r [f64] {
        let base = self.config.context * self.config.slot_width();
        &input_row[base..base + self.config.gate_dim()]
    }

    fn apply_gates(&self, out: &mut Array2<f64>, gate: &Array2<f64>, input: &Array2<f64>) {
        let n = self.config.bins;
        for ((mut o, g), inp) in out.outer_iter_mut().zip(gate.outer_iter()).zip(input.outer_iter()) {
            let v = self.centre(inp.to_slice().expect("row-major"));
            let g = g.to_slice().expect("row-major");
            for k in 0..n {
                let mut re = 0.0;
                let mut im = 0.0;
                for s in 0..2 {
                    let (gr, gi) = (g[2 * s * n + k], g[(2 * s + 1) * n + k]);
                    let (vr, vi) = (v[2 * s * n + k], v[(2 * s + 1) * n + k]);
                    re += gr * vr - gi * vi;
                    im += gr * vi + gi * vr;
                }
                o[k] += re;
                o[n + k] += im;
            }
        }
    }

    fn split_output(&self, out: &Array2<f64>, frames: &[usize]) -> Vec<Bins> {
        let bins = self.config.bins;
        let mut row = 0;
        frames
            .iter()
            .map(|&t| {
                let mut b = Bins::zeros((bins, t));
                for j in 0..t {
                    let r = out.row(row);
                    for k in 0..bins {
                        b[[k, j]] = Complex64::new(r[k], r[bins + k]);
                    }
                    row += 1;
                }
                b
            })
            .collect()
    }

    /// Evaluates the network without recording anything; safe to share.
    pub fn forward(&self, queries: &[Query<'_>]) -> Result<Vec<Bins>> {
        let (input, cond, frames) = self.assemble(queries)?;
        let (out, _) = self.run(input, cond, frames.clone(), false);
        Ok(self.split_output(&out, &frames))
    }

    /// Evaluates and records the activations needed by [`VelocityNet::backward`].
    pub fn forward_record(&mut self, queries: &[Query<'_>]) -> Result<Vec<Bins>> {
        let (input, cond, frames) = self.assemble(queries)?;
        let (out, tape) = self.run(input, cond, frames.clone(), true);
        self.tape = tape;
        Ok(self.split_output(&out, &frames))
    }

    /// Accumulates `d loss / d params` into the gradient buffer, given the
    /// cotangent of each recorded output (real and imaginary parts are the
    /// partials with respect to the real and imaginary outputs). Consumes
    /// the recorded tape.
    pub fn backward(&mut self, cotangents: &[Bins]) -> Result<()> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        if cotangents.len() != tape.frames.len()
            || cotangents
                .iter()
                .zip(&tape.frames)
                .any(|(c, &t)| c.dim() != (self.config.bins, t))
        {
            return Err(Error::Contract(
                "cotangents must match the recorded outputs one-to-one in shape".into(),
            ));
        }
        let bins = self.config.bins;
        let rows = tape.input.nrows();
        let mut g_out = Array2::<f64>::zeros((rows, self.config.output_dim()));
        let mut row = 0;
        for c in cotangents {
            for j in 0..c.ncols() {
                for k in 0..bins {
                    g_out[[row, k]] = c[[k, j]].re;
                    g_out[[row, bins + k]] = c[[k, j]].im;
                }
                row += 1;
            }
        }

        let l = self.layout.clone();
        let params = &self.params;
        let grad = &mut self.grad;
        let mat = |s: Slot| ArrayView2::from_shape((s.rows, s.cols), &params[s.range()]).expect("slot");
        let acc_mat = |grad: &mut Vec<f64>, s: Slot, a: &Array2<f64>, b: &Array2<f64>| {
            let mut g = ArrayViewMut2::from_shape((s.rows, s.cols), &mut grad[s.range()]).expect("slot");
            general_mat_mul(1.0, &a.t(), b, 1.0, &mut g);
        };
        let acc_bias = |grad: &mut Vec<f64>, s: Slot, g: &Array2<f64>| {
            let mut v = ArrayViewMut1::from(&mut grad[s.range()]);
            v += &g.sum_axis(Axis(0));
        };

        let base = self.config.context * self.config.slot_width();
        let mut g_gate = Array2::<f64>::zeros((rows, self.config.gate_dim()));
        for ((mut gg, c), inp) in g_gate.outer_iter_mut().zip(g_out.outer_iter()).zip(tape.input.outer_iter()) {
            for s in 0..2 {
                for k in 0..bins {
                    let (vr, vi) = (inp[base + 2 * s * bins + k], inp[base + (2 * s + 1) * bins + k]);
                    let (cr, ci) = (c[k], c[bins + k]);
                    gg[2 * s * bins + k] = cr * vr + ci * vi;
                    gg[(2 * s + 1) * bins + k] = ci * vr - cr * vi;
                }
            }
        }

        acc_mat(grad, l.w_out, &tape.last, &g_out);
        acc_bias(grad, l.b_out, &g_out);
        acc_mat(grad, l.w_gate, &tape.last, &g_gate);
        acc_bias(grad, l.b_gate, &g_gate);
        let mut g_h = g_out.dot(&mat(l.w_out).t());
        general_mat_mul(1.0, &g_gate, &mat(l.w_gate).t(), 1.0, &mut g_h);

        for (i, b) in l.blocks.iter().enumerate().rev() {
            acc_mat(grad, b.w2, &tape.block_act[i], &g_h);
            acc_bias(grad, b.b2, &g_h);
            let mut g_p = g_h.dot(&mat(b.w2).t());
            g_p.zip_mut_with(&tape.block_pre[i], |g, &p| *g *= silu_grad(p));
            acc_mat(grad, b.w1, &tape.block_in[i], &g_p);
            acc_mat(grad, b.u, &tape.cond, &g_p);
            acc_bias(grad, b.b1, &g_p);
            general_mat_mul(1.0, &g_p, &mat(b.w1).t(), 1.0, &mut g_h);
        }

        g_h.zip_mut_with(&tape.pre_in, |g, &p| *g *= silu_grad(p));
        acc_mat(grad, l.w_in, &tape.input, &g_h);
        acc_bias(grad, l.b_in, &g_h);
        Ok(())
    }
}

impl VelocityField for VelocityNet {
    fn eval_batch(&self, queries: &[Query<'_>]) -> Result<Vec<Bins>> {
        self.forward(queries)
    }
}

#[cfg(test)]
mod tests;
