//! Dense building blocks over flat parameter buffers, each with an explicit
//! backward pass. Activations are row-major `m x n` slices.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with the given standard deviation.
    Normal(f64),
    /// Uniform on `[-a, a]`.
    Uniform(f64),
}

#[derive(Default, Debug)]
pub struct Builder {
    pub specs: Vec<ParamSpec>,
    pub len: usize,
    inits: Vec<Init>,
}

impl Builder {
    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> usize {
        let offset = self.len;
        let spec = ParamSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
        };
        self.len += spec.len();
        self.specs.push(spec);
        self.inits.push(init);
        offset
    }

    pub fn linear(&mut self, name: &str, n_in: usize, n_out: usize) -> Linear {
        self.linear_scaled(name, n_in, n_out, 1.0)
    }

    /// Linear layer with uniform fan-in init scaled by `gain`.
    pub fn linear_scaled(&mut self, name: &str, n_in: usize, n_out: usize, gain: f64) -> Linear {
        let a = gain * (6.0 / (n_in + n_out) as f64).sqrt();
        let w = self.add(&format!("{name}.weight"), &[n_out, n_in], Init::Uniform(a));
        let b = self.add(&format!("{name}.bias"), &[n_out], Init::Zeros);
        Linear { w, b, n_in, n_out }
    }

    pub fn layer_norm(&mut self, name: &str, dim: usize) -> LayerNorm {
        let g = self.add(&format!("{name}.gain"), &[dim], Init::Ones);
        let b = self.add(&format!("{name}.bias"), &[dim], Init::Zeros);
        LayerNorm { g, b, dim }
    }

    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.len];
        for (spec, init) in self.specs.iter().zip(&self.inits) {
            let dst = &mut p[spec.offset..spec.offset + spec.len()];
            match *init {
                Init::Zeros => {}
                Init::Ones => dst.fill(1.0),
                Init::Normal(sd) => {
                    let d = Normal::new(0.0, sd).expect("valid sd");
                    dst.iter_mut().for_each(|v| *v = d.sample(rng));
                }
                Init::Uniform(a) => dst.iter_mut().for_each(|v| *v = rng.random_range(-a..=a)),
            }
        }
        p
    }
}

/// `y = W x + b`, `W` stored `n_out x n_in`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let m = x.len() / self.n_in;
        let w = &p[self.w..self.w + self.n_in * self.n_out];
        let b = &p[self.b..self.b + self.n_out];
        let mut y = Vec::with_capacity(m * self.n_out);
        for row in x.chunks_exact(self.n_in) {
            for (j, wj) in w.chunks_exact(self.n_in).enumerate() {
                y.push(b[j] + dot(wj, row));
            }
        }
        y
    }

    /// Accumulates parameter gradients; returns `dL/dx` when `want_dx`.
    pub fn backward(&self, p: &[f64], g: &mut [f64], x: &[f64], dy: &[f64], want_dx: bool) -> Vec<f64> {
        let (ni, no) = (self.n_in, self.n_out);
        let mut dx = if want_dx { vec![0.0; x.len()] } else { Vec::new() };
        for (row, dyr) in x.chunks_exact(ni).zip(dy.chunks_exact(no)) {
            for (j, &d) in dyr.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g[self.b + j] += d;
                let gw = &mut g[self.w + j * ni..self.w + (j + 1) * ni];
                for (gk, &xk) in gw.iter_mut().zip(row) {
                    *gk += d * xk;
                }
            }
        }
        if want_dx {
            let w = &p[self.w..self.w + ni * no];
            for (dxr, dyr) in dx.chunks_exact_mut(ni).zip(dy.chunks_exact(no)) {
                for (wj, &d) in w.chunks_exact(ni).zip(dyr) {
                    if d == 0.0 {
                        continue;
                    }
                    for (o, &wk) in dxr.iter_mut().zip(wj) {
                        *o += d * wk;
                    }
                }
            }
        }
        dx
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

pub fn silu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(dy)
        .map(|(&v, &d)| {
            let s = sigmoid(v);
            d * s * (1.0 + v * (1.0 - s))
        })
        .collect()
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub g: usize,
    pub b: usize,
    pub dim: usize,
}

pub struct LnCache {
    xhat: Vec<f64>,
    inv: Vec<f64>,
}

impl LayerNorm {
    pub fn forward(&self, p: &[f64], x: &[f64]) -> (Vec<f64>, LnCache) {
        let d = self.dim;
        let g = &p[self.g..self.g + d];
        let b = &p[self.b..self.b + d];
        let mut y = Vec::with_capacity(x.len());
        let mut xhat = Vec::with_capacity(x.len());
        let mut inv = Vec::with_capacity(x.len() / d);
        for row in x.chunks_exact(d) {
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            inv.push(s);
            for k in 0..d {
                let xh = (row[k] - mu) * s;
                xhat.push(xh);
                y.push(g[k] * xh + b[k]);
            }
        }
        (y, LnCache { xhat, inv })
    }

    pub fn backward(&self, p: &[f64], grad: &mut [f64], cache: &LnCache, dy: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut dx = vec![0.0; dy.len()];
        for (r, (dyr, xh)) in dy.chunks_exact(d).zip(cache.xhat.chunks_exact(d)).enumerate() {
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            let mut dxh = vec![0.0; d];
            for k in 0..d {
                grad[self.g + k] += dyr[k] * xh[k];
                grad[self.b + k] += dyr[k];
                dxh[k] = dyr[k] * p[self.g + k];
                m1 += dxh[k];
                m2 += dxh[k] * xh[k];
            }
            m1 /= d as f64;
            m2 /= d as f64;
            let s = cache.inv[r];
            for k in 0..d {
                dx[r * d + k] = s * (dxh[k] - m1 - xh[k] * m2);
            }
        }
        dx
    }
}

/// Multi-head attention of `m` query tokens over `n` key/value tokens, all
/// of width `dim`. No positional terms, so self-attention is permutation
/// equivariant in the tokens.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

pub struct AttnCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Per head `m x n` attention weights.
    a: Vec<f64>,
    ctx: Vec<f64>,
}

impl Attention {
    pub fn new(b: &mut Builder, name: &str, dim: usize, heads: usize) -> Self {
        Attention {
            q: b.linear(&format!("{name}.q"), dim, dim),
            k: b.linear(&format!("{name}.k"), dim, dim),
            v: b.linear(&format!("{name}.v"), dim, dim),
            o: b.linear(&format!("{name}.o"), dim, dim),
            heads,
        }
    }

    pub fn forward(&self, p: &[f64], xq: &[f64], xkv: &[f64]) -> (Vec<f64>, AttnCache) {
        let dim = self.q.n_out;
        let m = xq.len() / dim;
        let n = xkv.len() / dim;
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.q.forward(p, xq);
        let k = self.k.forward(p, xkv);
        let v = self.v.forward(p, xkv);
        let mut a = vec![0.0; self.heads * m * n];
        let mut ctx = vec![0.0; m * dim];
        for h in 0..self.heads {
            let off = h * dh;
            for i in 0..m {
                let qi = &q[i * dim + off..i * dim + off + dh];
                let row = &mut a[(h * m + i) * n..(h * m + i + 1) * n];
                for j in 0..n {
                    row[j] = scale * dot(qi, &k[j * dim + off..j * dim + off + dh]);
                }
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - mx).exp();
                    z += *v;
                }
                row.iter_mut().for_each(|v| *v /= z);
                let out = &mut ctx[i * dim + off..i * dim + off + dh];
                for j in 0..n {
                    let w = row[j];
                    for (o, &vv) in out.iter_mut().zip(&v[j * dim + off..j * dim + off + dh]) {
                        *o += w * vv;
                    }
                }
            }
        }
        let y = self.o.forward(p, &ctx);
        (y, AttnCache { q, k, v, a, ctx })
    }

    /// Returns `(d xq, d xkv)`.
    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        xq: &[f64],
        xkv: &[f64],
        c: &AttnCache,
        dy: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let dim = self.q.n_out;
        let m = xq.len() / dim;
        let n = xkv.len() / dim;
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dctx = self.o.backward(p, g, &c.ctx, dy, true);
        let mut dq = vec![0.0; m * dim];
        let mut dk = vec![0.0; n * dim];
        let mut dv = vec![0.0; n * dim];
        let mut da = vec![0.0; n];
        for h in 0..self.heads {
            let off = h * dh;
            for i in 0..m {
                let arow = &c.a[(h * m + i) * n..(h * m + i + 1) * n];
                let dci = &dctx[i * dim + off..i * dim + off + dh];
                for j in 0..n {
                    da[j] = dot(dci, &c.v[j * dim + off..j * dim + off + dh]);
                    for (o, &d) in dv[j * dim + off..j * dim + off + dh].iter_mut().zip(dci) {
                        *o += arow[j] * d;
                    }
                }
                let s: f64 = arow.iter().zip(&da).map(|(a, d)| a * d).sum();
                for j in 0..n {
                    let ds = arow[j] * (da[j] - s) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for t in 0..dh {
                        dq[i * dim + off + t] += ds * c.k[j * dim + off + t];
                        dk[j * dim + off + t] += ds * c.q[i * dim + off + t];
                    }
                }
            }
        }
        let dxq = self.q.backward(p, g, xq, &dq, true);
        let mut dxkv = self.k.backward(p, g, xkv, &dk, true);
        for (o, v) in dxkv.iter_mut().zip(self.v.backward(p, g, xkv, &dv, true)) {
            *o += v;
        }
        (dxq, dxkv)
    }

    pub fn forward_self(&self, p: &[f64], x: &[f64]) -> (Vec<f64>, AttnCache) {
        self.forward(p, x, x)
    }

    pub fn backward_self(&self, p: &[f64], g: &mut [f64], x: &[f64], c: &AttnCache, dy: &[f64]) -> Vec<f64> {
        let (mut dx, dkv) = self.backward(p, g, x, x, c, dy);
        for (o, v) in dx.iter_mut().zip(dkv) {
            *o += v;
        }
        dx
    }
}
