//! Causal self-attention encoder mapping a token history to one value per
//! vocabulary token.
//!
//! Layers are post-norm (`LN(x + attn(x))`, `LN(h + ffn(h))`) with ReLU
//! feed-forward blocks and fixed sinusoidal positions. Each position attends
//! to itself and the previous `window - 1` positions of the layer below, so a
//! history can be extended one token at a time: the [`Trace`] keeps every
//! intermediate of the episode, which is both the key/value cache for acting
//! and the tape for the backward pass.
//!
//! Parameters live in one flat `Vec<f64>`; [`Layout`] names the ranges.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::vocab::VOCAB_SIZE;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub ffn_dim: usize,
    /// Attention span per layer, in tokens.
    pub window: usize,
}

impl NetShape {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.layers == 0 || self.heads == 0 || self.dim == 0 || self.ffn_dim == 0 {
            return Err("network dimensions must be positive".into());
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(format!("dim {} is not divisible by {} heads", self.dim, self.heads));
        }
        if !self.dim.is_multiple_of(2) {
            return Err("dim must be even for sinusoidal positions".into());
        }
        if self.window < 1 {
            return Err("window must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerLayout {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln1_g: usize,
    ln1_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2_g: usize,
    ln2_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub shape: NetShape,
    emb: usize,
    layers: Vec<LayerLayout>,
    w_out: usize,
    b_out: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(shape: NetShape) -> Self {
        let d = shape.dim;
        let f = shape.ffn_dim;
        let v = VOCAB_SIZE;
        let mut cursor = 0;
        let mut take = |n: usize| {
            let at = cursor;
            cursor += n;
            at
        };
        let emb = take(v * d);
        let layers = (0..shape.layers)
            .map(|_| LayerLayout {
                wq: take(d * d),
                bq: take(d),
                wk: take(d * d),
                bk: take(d),
                wv: take(d * d),
                bv: take(d),
                wo: take(d * d),
                bo: take(d),
                ln1_g: take(d),
                ln1_b: take(d),
                w1: take(d * f),
                b1: take(f),
                w2: take(f * d),
                b2: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
            })
            .collect();
        let w_out = take(d * v);
        let b_out = take(v);
        Layout {
            shape,
            emb,
            layers,
            w_out,
            b_out,
            total: cursor,
        }
    }

    /// Xavier-uniform weights, zero biases, unit norm gains, and
    /// unit-variance uniform embeddings.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.total];
        let d = self.shape.dim;
        let f = self.shape.ffn_dim;
        let fill = |p: &mut [f64], at: usize, rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            for x in &mut p[at..at + rows * cols] {
                *x = rng.gen_range(-bound..bound);
            }
        };
        // unit-variance embeddings, on the same scale as the positions
        let bound = 3f64.sqrt();
        for x in &mut p[self.emb..self.emb + VOCAB_SIZE * d] {
            *x = rng.gen_range(-bound..bound);
        }
        for l in &self.layers {
            for w in [l.wq, l.wk, l.wv, l.wo] {
                fill(&mut p, w, d, d, &mut rng);
            }
            fill(&mut p, l.w1, d, f, &mut rng);
            fill(&mut p, l.w2, f, d, &mut rng);
            for g in [l.ln1_g, l.ln2_g] {
                p[g..g + d].iter_mut().for_each(|x| *x = 1.0);
            }
        }
        fill(&mut p, self.w_out, d, VOCAB_SIZE, &mut rng);
        p
    }
}

/// `out = x W + b`, `W` stored row-major as `[in][out]`.
fn affine(x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    out.copy_from_slice(b);
    let cols = out.len();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
}

/// Accumulates `dW += x^T dy`, `db += dy`, and `dx += dy W^T` if requested.
fn affine_backward(x: &[f64], w: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64], dx: Option<&mut [f64]>) {
    let cols = dy.len();
    for (g, &d) in db.iter_mut().zip(dy) {
        *g += d;
    }
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            let row = &mut dw[i * cols..(i + 1) * cols];
            for (g, &d) in row.iter_mut().zip(dy) {
                *g += xi * d;
            }
        }
    }
    if let Some(dx) = dx {
        for (i, g) in dx.iter_mut().enumerate() {
            let row = &w[i * cols..(i + 1) * cols];
            *g += row.iter().zip(dy).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// Layer norm; writes the normalized input into `xhat` and returns 1/std.
fn layer_norm(x: &[f64], g: &[f64], b: &[f64], xhat: &mut [f64], out: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * inv;
        out[i] = xhat[i] * g[i] + b[i];
    }
    inv
}

fn layer_norm_backward(xhat: &[f64], inv: f64, g: &[f64], dy: &[f64], dg: &mut [f64], db: &mut [f64], dx: &mut [f64]) {
    let n = xhat.len() as f64;
    let mut sum_d = 0.0;
    let mut sum_dx = 0.0;
    for i in 0..xhat.len() {
        dg[i] += dy[i] * xhat[i];
        db[i] += dy[i];
        let dxh = dy[i] * g[i];
        sum_d += dxh;
        sum_dx += dxh * xhat[i];
    }
    for i in 0..xhat.len() {
        let dxh = dy[i] * g[i];
        dx[i] = inv * (dxh - sum_d / n - xhat[i] * sum_dx / n);
    }
}

pub fn sinusoid(position: usize, dim: usize, out: &mut [f64]) {
    for k in 0..dim / 2 {
        let rate = 1.0 / 10000f64.powf(2.0 * k as f64 / dim as f64);
        let angle = position as f64 * rate;
        out[2 * k] = angle.sin();
        out[2 * k + 1] = angle.cos();
    }
}

/// Per-layer activations, one row per position.
#[derive(Debug, Clone, Default)]
struct LayerTrace {
    input: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights; position t stores `heads * span(t)` values at `att_offset[t]`.
    att: Vec<f64>,
    att_offset: Vec<usize>,
    ctx: Vec<f64>,
    xhat1: Vec<f64>,
    inv1: Vec<f64>,
    h1: Vec<f64>,
    pre_relu: Vec<f64>,
    relu: Vec<f64>,
    xhat2: Vec<f64>,
    inv2: Vec<f64>,
    out: Vec<f64>,
}

/// Everything computed so far for one token history.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    tokens: Vec<u8>,
    layers: Vec<LayerTrace>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[u8] {
        &self.tokens
    }
}

/// Read-only view pairing a layout with a parameter vector.
pub struct Net<'a> {
    pub layout: &'a Layout,
    pub params: &'a [f64],
}

impl<'a> Net<'a> {
    pub fn new(layout: &'a Layout, params: &'a [f64]) -> Self {
        debug_assert_eq!(params.len(), layout.total);
        Net { layout, params }
    }

    fn p(&self, at: usize, len: usize) -> &'a [f64] {
        &self.params[at..at + len]
    }

    pub fn start(&self) -> Trace {
        Trace {
            tokens: Vec::new(),
            layers: vec![LayerTrace::default(); self.layout.shape.layers],
        }
    }

    /// Appends one token and computes its activations in every layer.
    pub fn push(&self, trace: &mut Trace, token: u8) {
        let shape = self.layout.shape;
        let (d, f, heads, dh) = (shape.dim, shape.ffn_dim, shape.heads, shape.head_dim());
        let t = trace.tokens.len();
        trace.tokens.push(token);
        let start = (t + 1).saturating_sub(shape.window);
        let span = t + 1 - start;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut x = vec![0.0; d];
        sinusoid(t, d, &mut x);
        for (xi, e) in x.iter_mut().zip(self.p(self.layout.emb + token as usize * d, d)) {
            *xi += e;
        }

        let mut buf = vec![0.0; d];
        let mut fbuf = vec![0.0; f];
        for (l, ll) in self.layout.layers.iter().enumerate() {
            let lt = &mut trace.layers[l];
            lt.input.extend_from_slice(&x);
            affine(&x, self.p(ll.wq, d * d), self.p(ll.bq, d), &mut buf);
            lt.q.extend_from_slice(&buf);
            affine(&x, self.p(ll.wk, d * d), self.p(ll.bk, d), &mut buf);
            lt.k.extend_from_slice(&buf);
            affine(&x, self.p(ll.wv, d * d), self.p(ll.bv, d), &mut buf);
            lt.v.extend_from_slice(&buf);

            lt.att_offset.push(lt.att.len());
            let mut ctx = vec![0.0; d];
            let q = &lt.q[t * d..(t + 1) * d];
            for h in 0..heads {
                let qh = &q[h * dh..(h + 1) * dh];
                let base = lt.att.len();
                let mut max = f64::NEG_INFINITY;
                for u in start..=t {
                    let kh = &lt.k[u * d + h * dh..u * d + (h + 1) * dh];
                    let s = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f64>() * scale;
                    max = max.max(s);
                    lt.att.push(s);
                }
                let weights = &mut lt.att[base..base + span];
                let mut z = 0.0;
                for w in weights.iter_mut() {
                    *w = (*w - max).exp();
                    z += *w;
                }
                for (idx, w) in weights.iter_mut().enumerate() {
                    *w /= z;
                    let u = start + idx;
                    let vh = &lt.v[u * d + h * dh..u * d + (h + 1) * dh];
                    for (c, &vv) in ctx[h * dh..(h + 1) * dh].iter_mut().zip(vh) {
                        *c += *w * vv;
                    }
                }
            }
            lt.ctx.extend_from_slice(&ctx);
            affine(&ctx, self.p(ll.wo, d * d), self.p(ll.bo, d), &mut buf);
            for (b, xi) in buf.iter_mut().zip(&x) {
                *b += xi;
            }
            let mut xhat = vec![0.0; d];
            let mut h1 = vec![0.0; d];
            let inv1 = layer_norm(&buf, self.p(ll.ln1_g, d), self.p(ll.ln1_b, d), &mut xhat, &mut h1);
            lt.xhat1.extend_from_slice(&xhat);
            lt.inv1.push(inv1);
            lt.h1.extend_from_slice(&h1);

            affine(&h1, self.p(ll.w1, d * f), self.p(ll.b1, f), &mut fbuf);
            lt.pre_relu.extend_from_slice(&fbuf);
            for z in fbuf.iter_mut() {
                *z = z.max(0.0);
            }
            lt.relu.extend_from_slice(&fbuf);
            affine(&fbuf, self.p(ll.w2, f * d), self.p(ll.b2, d), &mut buf);
            for (b, hv) in buf.iter_mut().zip(&h1) {
                *b += hv;
            }
            let inv2 = layer_norm(&buf, self.p(ll.ln2_g, d), self.p(ll.ln2_b, d), &mut xhat, &mut x);
            lt.xhat2.extend_from_slice(&xhat);
            lt.inv2.push(inv2);
            lt.out.extend_from_slice(&x);
        }
    }

    pub fn push_all(&self, trace: &mut Trace, tokens: &[u8]) {
        for &t in tokens {
            self.push(trace, t);
        }
    }

    /// Value estimates read out at `position`.
    pub fn values_at(&self, trace: &Trace, position: usize) -> [f64; VOCAB_SIZE] {
        let d = self.layout.shape.dim;
        let top = trace.layers.last().expect("at least one layer");
        let x = &top.out[position * d..(position + 1) * d];
        let mut out = [0.0; VOCAB_SIZE];
        affine(
            x,
            self.p(self.layout.w_out, d * VOCAB_SIZE),
            self.p(self.layout.b_out, VOCAB_SIZE),
            &mut out,
        );
        out
    }

    pub fn values_last(&self, trace: &Trace) -> [f64; VOCAB_SIZE] {
        self.values_at(trace, trace.len() - 1)
    }

    /// Backpropagates `d loss / d values` given at a set of positions
    /// (`(position, gradient over vocabulary)`) and accumulates into `grad`.
    pub fn backward(&self, trace: &Trace, output_grads: &[(usize, [f64; VOCAB_SIZE])], grad: &mut [f64]) {
        let shape = self.layout.shape;
        let (d, f, heads, dh) = (shape.dim, shape.ffn_dim, shape.heads, shape.head_dim());
        let len = trace.len();
        let scale = 1.0 / (dh as f64).sqrt();

        // gradient w.r.t. each layer's output rows
        let mut dx = vec![0.0; len * d];
        {
            let top = trace.layers.last().unwrap();
            let w = self.p(self.layout.w_out, d * VOCAB_SIZE);
            for (pos, dv) in output_grads {
                let x = &top.out[pos * d..(pos + 1) * d];
                let (gw, gb) = two_mut(grad, self.layout.w_out, self.layout.b_out, d * VOCAB_SIZE);
                affine_backward(x, w, dv, gw, &mut gb[..VOCAB_SIZE], Some(&mut dx[pos * d..(pos + 1) * d]));
            }
        }

        let mut dr = vec![0.0; d];
        let mut dh1 = vec![0.0; d];
        let mut df = vec![0.0; f];
        let mut datt = vec![0.0; d];
        let mut dctx = vec![0.0; d];
        for (l, ll) in self.layout.layers.iter().enumerate().rev() {
            let lt = &trace.layers[l];
            let mut dq = vec![0.0; len * d];
            let mut dk = vec![0.0; len * d];
            let mut dv = vec![0.0; len * d];
            let mut dinput = vec![0.0; len * d];
            for t in 0..len {
                let dout = &dx[t * d..(t + 1) * d];
                if dout.iter().all(|&g| g == 0.0) {
                    continue;
                }
                let row = t * d..(t + 1) * d;
                // LN2
                {
                    let (gg, gb) = two_mut(grad, ll.ln2_g, ll.ln2_b, d);
                    layer_norm_backward(
                        &lt.xhat2[row.clone()],
                        lt.inv2[t],
                        self.p(ll.ln2_g, d),
                        dout,
                        gg,
                        gb,
                        &mut dr,
                    );
                }
                // FFN
                dh1.copy_from_slice(&dr);
                {
                    df.iter_mut().for_each(|g| *g = 0.0);
                    let (gw, gb) = two_mut(grad, ll.w2, ll.b2, f * d);
                    affine_backward(
                        &lt.relu[t * f..(t + 1) * f],
                        self.p(ll.w2, f * d),
                        &dr,
                        gw,
                        &mut gb[..d],
                        Some(&mut df),
                    );
                    for (g, &z) in df.iter_mut().zip(&lt.pre_relu[t * f..(t + 1) * f]) {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    let (gw, gb) = two_mut(grad, ll.w1, ll.b1, d * f);
                    affine_backward(
                        &lt.h1[row.clone()],
                        self.p(ll.w1, d * f),
                        &df,
                        gw,
                        &mut gb[..f],
                        Some(&mut dh1),
                    );
                }
                // LN1
                {
                    let (gg, gb) = two_mut(grad, ll.ln1_g, ll.ln1_b, d);
                    layer_norm_backward(
                        &lt.xhat1[row.clone()],
                        lt.inv1[t],
                        self.p(ll.ln1_g, d),
                        &dh1,
                        gg,
                        gb,
                        &mut datt,
                    );
                }
                for (g, &a) in dinput[t * d..(t + 1) * d].iter_mut().zip(&datt) {
                    *g += a;
                }
                // output projection
                dctx.iter_mut().for_each(|g| *g = 0.0);
                {
                    let (gw, gb) = two_mut(grad, ll.wo, ll.bo, d * d);
                    affine_backward(
                        &lt.ctx[row.clone()],
                        self.p(ll.wo, d * d),
                        &datt,
                        gw,
                        &mut gb[..d],
                        Some(&mut dctx),
                    );
                }
                // attention
                let start = (t + 1).saturating_sub(shape.window);
                let span = t + 1 - start;
                let q = &lt.q[t * d..(t + 1) * d];
                for h in 0..heads {
                    let weights = &lt.att[lt.att_offset[t] + h * span..lt.att_offset[t] + (h + 1) * span];
                    let dc = &dctx[h * dh..(h + 1) * dh];
                    let mut da = vec![0.0; span];
                    let mut dot = 0.0;
                    for (idx, &w) in weights.iter().enumerate() {
                        let u = start + idx;
                        let vh = &lt.v[u * d + h * dh..u * d + (h + 1) * dh];
                        da[idx] = dc.iter().zip(vh).map(|(a, b)| a * b).sum();
                        dot += w * da[idx];
                        for (g, &c) in dv[u * d + h * dh..u * d + (h + 1) * dh].iter_mut().zip(dc) {
                            *g += w * c;
                        }
                    }
                    for (idx, &w) in weights.iter().enumerate() {
                        let ds = w * (da[idx] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let u = start + idx;
                        for c in 0..dh {
                            dq[t * d + h * dh + c] += ds * lt.k[u * d + h * dh + c];
                            dk[u * d + h * dh + c] += ds * q[h * dh + c];
                        }
                    }
                }
            }
            // q/k/v projections
            for t in 0..len {
                let x = &lt.input[t * d..(t + 1) * d];
                let dxt = &mut dinput[t * d..(t + 1) * d];
                for (w, b, g) in [(ll.wq, ll.bq, &dq), (ll.wk, ll.bk, &dk), (ll.wv, ll.bv, &dv)] {
                    let gy = &g[t * d..(t + 1) * d];
                    if gy.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let (gw, gb) = two_mut(grad, w, b, d * d);
                    affine_backward(x, self.p(w, d * d), gy, gw, &mut gb[..d], Some(dxt));
                }
            }
            dx = dinput;
        }
        for t in 0..len {
            let tok = trace.tokens[t] as usize;
            let at = self.layout.emb + tok * d;
            for (g, &v) in grad[at..at + d].iter_mut().zip(&dx[t * d..(t + 1) * d]) {
                *g += v;
            }
        }
    }
}

/// Disjoint mutable views `[a, a + len_a)` and `[b, ...)` with `a < b`.
fn two_mut(grad: &mut [f64], a: usize, b: usize, len_a: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a + len_a <= b);
    let (left, right) = grad.split_at_mut(b);
    (&mut left[a..a + len_a], right)
}

/// Adam with optional global-norm gradient clipping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(size: usize, learning_rate: f64, clip_norm: Option<f64>) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm,
            step: 0,
            m: vec![0.0; size],
            v: vec![0.0; size],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &mut [f64]) {
        if let Some(max) = self.clip_norm {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max {
                let s = max / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.learning_rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> NetShape {
        NetShape {
            layers: 2,
            heads: 2,
            dim: 8,
            ffn_dim: 12,
            window: 4,
        }
    }

    #[test]
    fn incremental_matches_fresh_evaluation() {
        let layout = Layout::new(shape());
        let params = layout.init(3);
        let net = Net::new(&layout, &params);
        let tokens = [30u8, 4, 9, 10, 8, 5, 4, 11, 12, 6];
        let mut full = net.start();
        net.push_all(&mut full, &tokens);
        for cut in 1..=tokens.len() {
            let mut prefix = net.start();
            net.push_all(&mut prefix, &tokens[..cut]);
            assert_eq!(net.values_last(&prefix), net.values_at(&full, cut - 1));
        }
    }

    #[test]
    fn attention_span_is_bounded() {
        // with one layer, tokens older than the window cannot matter
        let s = NetShape { layers: 1, ..shape() };
        let layout = Layout::new(s);
        let params = layout.init(9);
        let net = Net::new(&layout, &params);
        let mut a = net.start();
        net.push_all(&mut a, &[30, 4, 9, 10, 8, 5, 4]);
        let mut b = net.start();
        net.push_all(&mut b, &[31, 5, 9, 10, 8, 5, 4]);
        assert_eq!(net.values_last(&a), net.values_last(&b));
        assert_ne!(net.values_at(&a, 2), net.values_at(&b, 2));
    }

    #[test]
    fn sinusoid_values() {
        let mut pe = [0.0; 4];
        sinusoid(0, 4, &mut pe);
        assert_eq!(pe, [0.0, 1.0, 0.0, 1.0]);
        sinusoid(3, 4, &mut pe);
        assert!((pe[0] - 3f64.sin()).abs() < 1e-15);
        assert!((pe[3] - (0.03f64).cos()).abs() < 1e-15);
    }

    #[test]
    fn shape_validation() {
        assert!(shape().validate().is_ok());
        assert!(NetShape { heads: 3, ..shape() }.validate().is_err());
        assert!(NetShape { window: 0, ..shape() }.validate().is_err());
    }

    fn loss(net: &Net, tokens: &[u8], targets: &[(usize, usize, f64)]) -> f64 {
        let mut tr = net.start();
        net.push_all(&mut tr, tokens);
        targets
            .iter()
            .map(|&(pos, a, r)| 0.5 * (net.values_at(&tr, pos)[a] - r).powi(2))
            .sum()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let layout = Layout::new(NetShape { window: 5, ..shape() });
        let mut params = layout.init(11);
        let tokens = [30u8, 4, 9, 10, 8, 5, 4, 11, 12, 6, 5, 4, 9, 13];
        let targets = [(0usize, 4usize, 0.7), (1, 9, -0.2), (5, 4, 1.3), (8, 5, -0.9), (13, 21, 0.4)];
        let mut grad = vec![0.0; layout.total];
        {
            let net = Net::new(&layout, &params);
            let mut tr = net.start();
            net.push_all(&mut tr, &tokens);
            let outs: Vec<_> = targets
                .iter()
                .map(|&(pos, a, r)| {
                    let mut g = [0.0; VOCAB_SIZE];
                    g[a] = net.values_at(&tr, pos)[a] - r;
                    (pos, g)
                })
                .collect();
            net.backward(&tr, &outs, &mut grad);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        let mut checked = 0;
        while checked < 50 {
            let i = rng.gen_range(0..layout.total);
            let orig = params[i];
            params[i] = orig + h;
            let up = loss(&Net::new(&layout, &params), &tokens, &targets);
            params[i] = orig - h;
            let down = loss(&Net::new(&layout, &params), &tokens, &targets);
            params[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let scale = numeric.abs().max(grad[i].abs());
            if scale < 1e-7 {
                continue;
            }
            let rel = (numeric - grad[i]).abs() / scale;
            assert!(rel < 1e-4, "param {i}: analytic {} numeric {numeric}", grad[i]);
            checked += 1;
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1, Some(1.0));
        for _ in 0..500 {
            let mut g = vec![2.0 * p[0], 4.0 * p[1]];
            opt.step(&mut p, &mut g);
        }
        assert!(p[0].abs() < 1e-2 && p[1].abs() < 1e-2, "{p:?}");
    }
}
