//! Two-layer stride-free convolutional encoder from the observation grid to
//! the latent feature grid, plus a coarse token grid: one embedding per
//! `block x block` patch of the observation, which the decoder attends to
//! globally. Features are stored cell-major (`h x w x d`).
//!
//! Training only reads the latent at a few hundred cells per step, so the
//! encoder can also be evaluated lazily, cell by cell, with a matching
//! sparse backward pass.

use super::layers::{silu, silu_backward, Builder, Init, Linear};
use crate::scene::ObservationGrid;

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub w: usize,
    pub b: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub dil: usize,
}

impl Conv {
    pub fn new(b: &mut Builder, name: &str, cin: usize, cout: usize, k: usize, dil: usize) -> Self {
        let fan_in = (cin * k * k) as f64;
        let w = b.add(&format!("{name}.weight"), &[cout, k, k, cin], Init::Normal((2.0 / fan_in).sqrt()));
        let bias = b.add(&format!("{name}.bias"), &[cout], Init::Zeros);
        Conv {
            w,
            b: bias,
            cin,
            cout,
            k,
            dil,
        }
    }

    /// In-grid neighbours of `(r, c)` as `(tap index, cell index)`.
    fn taps(&self, h: usize, w: usize, r: usize, c: usize, mut f: impl FnMut(usize, usize)) {
        let half = (self.k / 2) as isize;
        let d = self.dil as isize;
        for ky in 0..self.k {
            let rr = r as isize + (ky as isize - half) * d;
            if rr < 0 || rr >= h as isize {
                continue;
            }
            for kx in 0..self.k {
                let cc = c as isize + (kx as isize - half) * d;
                if cc < 0 || cc >= w as isize {
                    continue;
                }
                f(ky * self.k + kx, rr as usize * w + cc as usize);
            }
        }
    }

    /// Pre-activation output at one cell; `input(cell)` yields that cell's
    /// `cin` values.
    fn eval<'a>(&self, p: &[f64], h: usize, w: usize, r: usize, c: usize, input: impl Fn(usize) -> &'a [f64], out: &mut [f64]) {
        let kk = self.k * self.k;
        out.copy_from_slice(&p[self.b..self.b + self.cout]);
        self.taps(h, w, r, c, |tap, cell| {
            let x = input(cell);
            for (co, o) in out.iter_mut().enumerate() {
                let base = self.w + (co * kk + tap) * self.cin;
                let wk = &p[base..base + self.cin];
                *o += wk.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        });
    }
}

/// Patch embedding: each `block x block` patch (zero padded at the far
/// edges) is flattened, projected linearly and offset by a learned
/// per-patch position embedding.
#[derive(Clone, Copy, Debug)]
pub struct TokenStem {
    pub proj: Linear,
    pub pos: usize,
    pub block: usize,
    pub cin: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TokenStem {
    pub fn new(b: &mut Builder, name: &str, cin: usize, dim: usize, block: usize, h: usize, w: usize) -> Self {
        let (rows, cols) = (h.div_ceil(block), w.div_ceil(block));
        let proj = b.linear(&format!("{name}.proj"), block * block * cin, dim);
        let pos = b.add(&format!("{name}.pos"), &[rows * cols, dim], Init::Normal(0.5));
        TokenStem {
            proj,
            pos,
            block,
            cin,
            rows,
            cols,
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.rows * self.cols
    }

    fn patches(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (b, cin) = (self.block, self.cin);
        let width = b * b * cin;
        let mut x = vec![0.0; self.n_tokens() * width];
        for tr in 0..self.rows {
            for tc in 0..self.cols {
                let base = (tr * self.cols + tc) * width;
                for dr in 0..b {
                    let r = tr * b + dr;
                    if r >= h {
                        break;
                    }
                    for dc in 0..b {
                        let c = tc * b + dc;
                        if c >= w {
                            break;
                        }
                        let cell = r * w + c;
                        let o = base + (dr * b + dc) * cin;
                        x[o..o + cin].copy_from_slice(&input[cell * cin..(cell + 1) * cin]);
                    }
                }
            }
        }
        x
    }

    pub fn forward(&self, p: &[f64], input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let mut y = self.proj.forward(p, &self.patches(input, h, w));
        for (v, e) in y.iter_mut().zip(&p[self.pos..self.pos + self.n_tokens() * self.proj.n_out]) {
            *v += e;
        }
        y
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], input: &[f64], h: usize, w: usize, dtok: &[f64]) {
        if dtok.iter().all(|&v| v == 0.0) {
            return;
        }
        self.proj.backward(p, g, &self.patches(input, h, w), dtok, false);
        for (a, d) in g[self.pos..self.pos + dtok.len()].iter_mut().zip(dtok) {
            *a += d;
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Encoder {
    pub conv1: Conv,
    pub conv2: Conv,
    pub tokens: TokenStem,
}

/// Latent feature grid and token set used as the denoiser condition.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub data: Vec<f64>,
    /// `n_tokens x token_dim`, row-major.
    pub tokens: Vec<f64>,
}

impl LatentGrid {
    pub fn at(&self, r: usize, c: usize) -> &[f64] {
        let i = (r * self.w + c) * self.d;
        &self.data[i..i + self.d]
    }
}

/// Channel-major observation to cell-major layout.
pub fn obs_to_cells(obs: &ObservationGrid) -> Vec<f64> {
    let n = obs.h * obs.w;
    let ch = obs.data.len() / n;
    let mut out = vec![0.0; obs.data.len()];
    for c in 0..ch {
        for i in 0..n {
            out[i * ch + c] = obs.data[c * n + i];
        }
    }
    out
}

impl Encoder {
    pub fn encode(&self, p: &[f64], input: &[f64], h: usize, w: usize) -> LatentGrid {
        let (c1, c2) = (self.conv1, self.conv2);
        let mut pre = vec![0.0; h * w * c1.cout];
        for r in 0..h {
            for c in 0..w {
                let i = (r * w + c) * c1.cout;
                c1.eval(p, h, w, r, c, |cell| &input[cell * c1.cin..(cell + 1) * c1.cin], &mut pre[i..i + c1.cout]);
            }
        }
        let act = silu(&pre);
        let mut data = vec![0.0; h * w * c2.cout];
        for r in 0..h {
            for c in 0..w {
                let i = (r * w + c) * c2.cout;
                c2.eval(p, h, w, r, c, |cell| &act[cell * c2.cin..(cell + 1) * c2.cin], &mut data[i..i + c2.cout]);
            }
        }
        LatentGrid {
            h,
            w,
            d: c2.cout,
            data,
            tokens: self.tokens.forward(p, input, h, w),
        }
    }
}

/// Access to latent features through dense slot indices, so the decoder can
/// record which features it read and route gradients back to them.
pub trait Features {
    fn shape(&self) -> (usize, usize, usize);
    fn slot(&mut self, r: usize, c: usize) -> usize;
    fn feature(&self, slot: usize) -> &[f64];
    fn n_slots(&self) -> usize;
    fn tokens(&self) -> &[f64];
}

pub struct FullFeatures<'a>(pub &'a LatentGrid);

impl Features for FullFeatures<'_> {
    fn shape(&self) -> (usize, usize, usize) {
        (self.0.h, self.0.w, self.0.d)
    }

    fn slot(&mut self, r: usize, c: usize) -> usize {
        r * self.0.w + c
    }

    fn feature(&self, slot: usize) -> &[f64] {
        &self.0.data[slot * self.0.d..(slot + 1) * self.0.d]
    }

    fn n_slots(&self) -> usize {
        self.0.h * self.0.w
    }

    fn tokens(&self) -> &[f64] {
        &self.0.tokens
    }
}

const UNSET: u32 = u32::MAX;

/// Encoder evaluated on demand at the cells the decoder actually samples.
pub struct LazyFeatures<'a> {
    enc: Encoder,
    p: &'a [f64],
    input: &'a [f64],
    h: usize,
    w: usize,
    h1_slot: Vec<u32>,
    h1_cells: Vec<usize>,
    h1_pre: Vec<f64>,
    h1_act: Vec<f64>,
    lat_slot: Vec<u32>,
    lat_cells: Vec<usize>,
    lat: Vec<f64>,
    tokens: Vec<f64>,
}

impl<'a> LazyFeatures<'a> {
    pub fn new(enc: Encoder, p: &'a [f64], input: &'a [f64], h: usize, w: usize) -> Self {
        LazyFeatures {
            enc,
            p,
            input,
            h,
            w,
            h1_slot: vec![UNSET; h * w],
            h1_cells: Vec::new(),
            h1_pre: Vec::new(),
            h1_act: Vec::new(),
            lat_slot: vec![UNSET; h * w],
            lat_cells: Vec::new(),
            lat: Vec::new(),
            tokens: enc.tokens.forward(p, input, h, w),
        }
    }

    fn ensure_h1(&mut self, cell: usize) {
        if self.h1_slot[cell] != UNSET {
            return;
        }
        let c1 = self.enc.conv1;
        let mut out = vec![0.0; c1.cout];
        let input = self.input;
        c1.eval(self.p, self.h, self.w, cell / self.w, cell % self.w, |n| &input[n * c1.cin..(n + 1) * c1.cin], &mut out);
        self.h1_slot[cell] = self.h1_cells.len() as u32;
        self.h1_cells.push(cell);
        self.h1_act.extend(silu(&out));
        self.h1_pre.extend(out);
    }

    /// Sparse backward from latent gradients (`n_slots x d`) and token
    /// gradients into the encoder parameters.
    pub fn backward(&self, g: &mut [f64], dlat: &[f64], dtok: &[f64]) {
        let (c1, c2) = (self.enc.conv1, self.enc.conv2);
        let p = self.p;
        self.enc.tokens.backward(p, g, self.input, self.h, self.w, dtok);
        let mut dh1 = vec![0.0; self.h1_act.len()];
        let kk2 = c2.k * c2.k;
        for (s, &cell) in self.lat_cells.iter().enumerate() {
            let d = &dlat[s * c2.cout..(s + 1) * c2.cout];
            if d.iter().all(|&v| v == 0.0) {
                continue;
            }
            for (co, &dv) in d.iter().enumerate() {
                g[c2.b + co] += dv;
            }
            c2.taps(self.h, self.w, cell / self.w, cell % self.w, |tap, n| {
                let hs = self.h1_slot[n] as usize;
                let x = &self.h1_act[hs * c2.cin..(hs + 1) * c2.cin];
                let dx = &mut dh1[hs * c2.cin..(hs + 1) * c2.cin];
                for (co, &dv) in d.iter().enumerate() {
                    let base = c2.w + (co * kk2 + tap) * c2.cin;
                    for ci in 0..c2.cin {
                        g[base + ci] += dv * x[ci];
                        dx[ci] += dv * p[base + ci];
                    }
                }
            });
        }
        let dpre = silu_backward(&self.h1_pre, &dh1);
        let kk1 = c1.k * c1.k;
        for (s, &cell) in self.h1_cells.iter().enumerate() {
            let d = &dpre[s * c1.cout..(s + 1) * c1.cout];
            if d.iter().all(|&v| v == 0.0) {
                continue;
            }
            for (co, &dv) in d.iter().enumerate() {
                g[c1.b + co] += dv;
            }
            c1.taps(self.h, self.w, cell / self.w, cell % self.w, |tap, n| {
                let x = &self.input[n * c1.cin..(n + 1) * c1.cin];
                for (co, &dv) in d.iter().enumerate() {
                    let base = c1.w + (co * kk1 + tap) * c1.cin;
                    for ci in 0..c1.cin {
                        g[base + ci] += dv * x[ci];
                    }
                }
            });
        }
    }

    pub fn cells_evaluated(&self) -> (usize, usize) {
        (self.h1_cells.len(), self.lat_cells.len())
    }
}

impl Features for LazyFeatures<'_> {
    fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.enc.conv2.cout)
    }

    fn slot(&mut self, r: usize, c: usize) -> usize {
        let cell = r * self.w + c;
        if self.lat_slot[cell] != UNSET {
            return self.lat_slot[cell] as usize;
        }
        let c2 = self.enc.conv2;
        let mut needed = Vec::new();
        c2.taps(self.h, self.w, r, c, |_, n| needed.push(n));
        for n in needed {
            self.ensure_h1(n);
        }
        let mut out = vec![0.0; c2.cout];
        let (slots, act) = (&self.h1_slot, &self.h1_act);
        c2.eval(self.p, self.h, self.w, r, c, |n| {
            let s = slots[n] as usize;
            &act[s * c2.cin..(s + 1) * c2.cin]
        }, &mut out);
        let s = self.lat_cells.len();
        self.lat_slot[cell] = s as u32;
        self.lat_cells.push(cell);
        self.lat.extend(out);
        s
    }

    fn feature(&self, slot: usize) -> &[f64] {
        let d = self.enc.conv2.cout;
        &self.lat[slot * d..(slot + 1) * d]
    }

    fn n_slots(&self) -> usize {
        self.lat_cells.len()
    }

    fn tokens(&self) -> &[f64] {
        &self.tokens
    }
}
