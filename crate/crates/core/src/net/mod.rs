//! The trainable denoiser: observation encoder plus a small transformer
//! decoder over polyline queries, with hand-written gradients.
//!
//! Each query carries a reference polyline. It starts at the posterior mean
//! of the clean signal given `x_t` under a Gaussian prior, every decoder
//! layer reads the latent grid by bilinear sampling at the current reference
//! points and adds a predicted offset, and the last reference is the clean
//! estimate `x0_hat`.

mod checkpoint;
mod encoder;
pub mod layers;
mod train;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

pub use checkpoint::{file_sha256, load_checkpoint, load_encoder_into, save_checkpoint, CheckpointHeader};
pub use encoder::{obs_to_cells, Encoder, Features, FullFeatures, LatentGrid, LazyFeatures, TokenStem};
pub use train::{
    cosine_lr, gradient_check, loss_and_grad, loss_value, train, write_log_csv, AdamW, GradCheck, LossParts, StepLog, TrainConfig, TrainExample, ValidationHook,
};

use crate::diffusion::{DenoiseOutput, Denoiser, NoiseSchedule, SamplerConfig, N_LOGITS};
use crate::error::{Error, Result};
use crate::geometry::VectorMap;
use crate::rng::{derive_seed, rng_from};
use crate::scene::{ObservationGrid, OBS_CHANNELS};
use encoder::Conv;
use layers::{silu, silu_backward, AttnCache, Builder, LayerNorm, Linear, LnCache, ParamSpec, Attention};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub n_points: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub conv1_channels: usize,
    pub conv1_kernel: usize,
    pub conv2_kernel: usize,
    pub conv2_dilation: usize,
    pub latent_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub layers: usize,
    pub time_dim: usize,
    /// Side of the observation patch behind each global token.
    pub token_block: usize,
    /// Init gain of the per-layer reference offset heads.
    pub refine_gain: f64,
    /// Prior variance of clean signal coordinates used for the initial
    /// reference points.
    pub prior_var: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            n_points: 10,
            grid_h: 100,
            grid_w: 50,
            conv1_channels: 16,
            conv1_kernel: 5,
            conv2_kernel: 3,
            conv2_dilation: 2,
            latent_dim: 32,
            d_model: 64,
            heads: 4,
            ffn_dim: 128,
            layers: 2,
            time_dim: 64,
            token_block: 10,
            refine_gain: 0.1,
            prior_var: 1.0 / 3.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_points < 2 {
            return bad("n_points must be at least 2");
        }
        if self.grid_h < 2 || self.grid_w < 2 {
            return bad("latent grid must be at least 2x2");
        }
        if self.conv1_kernel.is_multiple_of(2) || self.conv2_kernel.is_multiple_of(2) || self.conv2_dilation == 0 {
            return bad("conv kernels must be odd and dilation positive");
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.time_dim < 2 || !self.time_dim.is_multiple_of(2) {
            return bad("time_dim must be even");
        }
        if self.layers == 0 || self.latent_dim == 0 || self.conv1_channels == 0 || self.ffn_dim == 0 {
            return bad("layer sizes must be positive");
        }
        if self.token_block == 0 {
            return bad("token_block must be positive");
        }
        if self.prior_var <= 0.0 {
            return bad("prior_var must be positive");
        }
        Ok(())
    }

    fn query_len(&self) -> usize {
        2 * self.n_points
    }
}

#[derive(Clone, Copy, Debug)]
struct DecoderLayer {
    attn: Attention,
    ln1: LayerNorm,
    xattn: Attention,
    lnx: LayerNorm,
    cross1: Linear,
    cross2: Linear,
    ln2: LayerNorm,
    ffn1: Linear,
    ffn2: Linear,
    ln3: LayerNorm,
    refine: Linear,
}

/// Parameter layout of one architecture.
#[derive(Clone, Debug)]
pub struct Net {
    pub cfg: NetConfig,
    pub specs: Vec<ParamSpec>,
    pub n_params: usize,
    pub encoder: Encoder,
    time1: Linear,
    time2: Linear,
    input: Linear,
    layers: Vec<DecoderLayer>,
    class_head: Linear,
    builder: std::sync::Arc<Builder>,
}

impl Net {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut b = Builder::default();
        let conv1 = Conv::new(&mut b, "encoder.conv1", OBS_CHANNELS, cfg.conv1_channels, cfg.conv1_kernel, 1);
        let conv2 = Conv::new(
            &mut b,
            "encoder.conv2",
            cfg.conv1_channels,
            cfg.latent_dim,
            cfg.conv2_kernel,
            cfg.conv2_dilation,
        );
        let d = cfg.d_model;
        let tokens = TokenStem::new(&mut b, "encoder.tokens", OBS_CHANNELS, d, cfg.token_block, cfg.grid_h, cfg.grid_w);
        let q = cfg.query_len();
        let time1 = b.linear("time.fc1", cfg.time_dim, d);
        let time2 = b.linear("time.fc2", d, d);
        let input = b.linear("query.input", 2 * q, d);
        let mut layers = Vec::new();
        for i in 0..cfg.layers {
            let n = |s: &str| format!("decoder.{i}.{s}");
            layers.push(DecoderLayer {
                attn: Attention::new(&mut b, &n("self_attn"), d, cfg.heads),
                ln1: b.layer_norm(&n("norm1"), d),
                xattn: Attention::new(&mut b, &n("token_attn"), d, cfg.heads),
                lnx: b.layer_norm(&n("norm_tokens"), d),
                cross1: b.linear(&n("cross.fc1"), d + cfg.n_points * cfg.latent_dim + q, d),
                cross2: b.linear(&n("cross.fc2"), d, d),
                ln2: b.layer_norm(&n("norm2"), d),
                ffn1: b.linear(&n("ffn.fc1"), d, cfg.ffn_dim),
                ffn2: b.linear(&n("ffn.fc2"), cfg.ffn_dim, d),
                ln3: b.layer_norm(&n("norm3"), d),
                refine: b.linear_scaled(&n("refine"), d, q, cfg.refine_gain),
            });
        }
        let class_head = b.linear("class_head", d, N_LOGITS);
        Ok(Net {
            cfg: cfg.clone(),
            specs: b.specs.clone(),
            n_params: b.len,
            encoder: Encoder { conv1, conv2, tokens },
            time1,
            time2,
            input,
            layers,
            class_head,
            builder: std::sync::Arc::new(b),
        })
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        self.builder.init(&mut rng_from(derive_seed(seed, 0x1417)))
    }

    /// Range of encoder parameters in the flat buffer.
    pub fn encoder_range(&self) -> std::ops::Range<usize> {
        let end = self
            .specs
            .iter()
            .filter(|s| s.name.starts_with("encoder."))
            .map(|s| s.offset + s.len())
            .max()
            .unwrap_or(0);
        0..end
    }

    pub fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }
}

pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut e = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10000f64).ln() * k as f64 / half as f64).exp();
        let a = t as f64 * freq;
        e[k] = a.sin();
        e[k + half] = a.cos();
    }
    e
}

/// Shrink factor of the posterior mean `E[x0 | x_t]` for a zero-mean
/// Gaussian prior of variance `v`.
pub fn posterior_scale(alpha_bar: f64, v: f64) -> f64 {
    alpha_bar.sqrt() * v / (alpha_bar * v + 1.0 - alpha_bar)
}

/// Posterior standard deviation of `x0` given `x_t` under the same prior;
/// scales every reference update so corrections shrink as noise vanishes.
pub fn posterior_std(alpha_bar: f64, v: f64) -> f64 {
    (v * (1.0 - alpha_bar) / (alpha_bar * v + 1.0 - alpha_bar)).sqrt()
}

/// Bilinear read of the latent grid at one signal-space point.
#[derive(Clone, Copy, Debug)]
struct Tap {
    slots: [usize; 4],
    a: f64,
    b: f64,
    /// d(row position)/d(z_x) and d(col position)/d(z_y); zero when clamped.
    dr: f64,
    dc: f64,
    cell: (usize, usize),
}

fn tap<F: Features>(feats: &mut F, zx: f64, zy: f64) -> Tap {
    let (h, w, _) = feats.shape();
    let (hf, wf) = (h as f64, w as f64);
    let fr_raw = (1.0 - 0.5 * (zx + 1.0)) * hf - 0.5;
    let fc_raw = 0.5 * (zy + 1.0) * wf - 0.5;
    let clamp = |v: f64, hi: f64, slope: f64| {
        if v < 0.0 {
            (0.0, 0.0)
        } else if v > hi {
            (hi, 0.0)
        } else if v.is_nan() {
            (0.0, 0.0)
        } else {
            (v, slope)
        }
    };
    let (fr, dr) = clamp(fr_raw, hf - 1.0, -0.5 * hf);
    let (fc, dc) = clamp(fc_raw, wf - 1.0, 0.5 * wf);
    let r0 = (fr.floor() as usize).min(h - 2);
    let c0 = (fc.floor() as usize).min(w - 2);
    let slots = [
        feats.slot(r0, c0),
        feats.slot(r0, c0 + 1),
        feats.slot(r0 + 1, c0),
        feats.slot(r0 + 1, c0 + 1),
    ];
    Tap {
        slots,
        a: fr - r0 as f64,
        b: fc - c0 as f64,
        dr,
        dc,
        cell: (r0, c0),
    }
}

fn tap_read<F: Features>(feats: &F, t: &Tap, out: &mut [f64]) {
    let wts = [(1.0 - t.a) * (1.0 - t.b), (1.0 - t.a) * t.b, t.a * (1.0 - t.b), t.a * t.b];
    out.fill(0.0);
    for (s, wt) in t.slots.iter().zip(wts) {
        for (o, &f) in out.iter_mut().zip(feats.feature(*s)) {
            *o += wt * f;
        }
    }
}

/// Backward of one tap: accumulates into `dlat`, returns `(dz_x, dz_y)`.
fn tap_backward<F: Features>(feats: &F, t: &Tap, ds: &[f64], dlat: &mut [f64]) -> (f64, f64) {
    let d = ds.len();
    let (a, b) = (t.a, t.b);
    let wts = [(1.0 - a) * (1.0 - b), (1.0 - a) * b, a * (1.0 - b), a * b];
    let da_w = [-(1.0 - b), -b, 1.0 - b, b];
    let db_w = [-(1.0 - a), 1.0 - a, -a, a];
    let mut da = 0.0;
    let mut db = 0.0;
    for k in 0..4 {
        let f = feats.feature(t.slots[k]);
        let g = &mut dlat[t.slots[k] * d..(t.slots[k] + 1) * d];
        let mut dot = 0.0;
        for j in 0..d {
            g[j] += wts[k] * ds[j];
            dot += f[j] * ds[j];
        }
        da += da_w[k] * dot;
        db += db_w[k] * dot;
    }
    (da * t.dr, db * t.dc)
}

struct LayerCache {
    h_in: Vec<f64>,
    attn: AttnCache,
    ln1: LnCache,
    h0: Vec<f64>,
    xattn: AttnCache,
    lnx: LnCache,
    taps: Vec<Tap>,
    cross_in: Vec<f64>,
    c1_pre: Vec<f64>,
    c1_act: Vec<f64>,
    ln2: LnCache,
    h2: Vec<f64>,
    f1_pre: Vec<f64>,
    f1_act: Vec<f64>,
    ln3: LnCache,
    h3: Vec<f64>,
}

pub struct ForwardCache {
    l: usize,
    c_out: f64,
    te0: Vec<f64>,
    th_pre: Vec<f64>,
    th: Vec<f64>,
    inp: Vec<f64>,
    layers: Vec<LayerCache>,
    h_out: Vec<f64>,
}

impl ForwardCache {
    /// Discrete state of the piecewise-smooth parts of the forward pass
    /// (sampled cells and clamping), used to detect finite-difference
    /// stencils that straddle a kink.
    pub fn signature(&self) -> Vec<i64> {
        let mut s = Vec::new();
        for lc in &self.layers {
            for t in &lc.taps {
                s.push(t.cell.0 as i64);
                s.push(t.cell.1 as i64);
                s.push((t.dr != 0.0) as i64);
                s.push((t.dc != 0.0) as i64);
            }
        }
        s
    }
}

impl Net {
    pub fn forward<F: Features>(
        &self,
        p: &[f64],
        x_t: &[f64],
        l: usize,
        t: usize,
        alpha_bar: f64,
        feats: &mut F,
    ) -> (DenoiseOutput, ForwardCache) {
        let cfg = &self.cfg;
        let (d, q, np) = (cfg.d_model, cfg.query_len(), cfg.n_points);
        let dl = feats.shape().2;
        let c = posterior_scale(alpha_bar, cfg.prior_var);
        let c_out = posterior_std(alpha_bar, cfg.prior_var);

        let te0 = time_embedding(t, cfg.time_dim);
        let th_pre = self.time1.forward(p, &te0);
        let th = silu(&th_pre);
        let te = self.time2.forward(p, &th);

        let mut refp: Vec<f64> = x_t.iter().map(|v| c * v).collect();
        let mut inp = Vec::with_capacity(l * 2 * q);
        for i in 0..l {
            inp.extend_from_slice(&refp[i * q..(i + 1) * q]);
            inp.extend_from_slice(&x_t[i * q..(i + 1) * q]);
        }
        let mut h = self.input.forward(p, &inp);
        for row in h.chunks_exact_mut(d) {
            for (v, e) in row.iter_mut().zip(&te) {
                *v += e;
            }
        }

        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (a, attn) = layer.attn.forward_self(p, &h);
            let s1: Vec<f64> = h.iter().zip(&a).map(|(x, y)| x + y).collect();
            let (h0, ln1) = layer.ln1.forward(p, &s1);
            let (ax, xattn) = layer.xattn.forward(p, &h0, feats.tokens());
            let sx: Vec<f64> = h0.iter().zip(&ax).map(|(x, y)| x + y).collect();
            let (h1, lnx) = layer.lnx.forward(p, &sx);

            let width = d + np * dl + q;
            let mut taps = Vec::with_capacity(l * np);
            let mut cross_in = vec![0.0; l * width];
            for i in 0..l {
                let row = &mut cross_in[i * width..(i + 1) * width];
                row[..d].copy_from_slice(&h1[i * d..(i + 1) * d]);
                for k in 0..np {
                    let zi = i * q + 2 * k;
                    let tp = tap(feats, refp[zi], refp[zi + 1]);
                    tap_read(feats, &tp, &mut row[d + k * dl..d + (k + 1) * dl]);
                    taps.push(tp);
                }
                row[d + np * dl..].copy_from_slice(&refp[i * q..(i + 1) * q]);
            }
            let c1_pre = layer.cross1.forward(p, &cross_in);
            let c1_act = silu(&c1_pre);
            let m = layer.cross2.forward(p, &c1_act);
            let s2: Vec<f64> = h1.iter().zip(&m).map(|(x, y)| x + y).collect();
            let (h2, ln2) = layer.ln2.forward(p, &s2);

            let f1_pre = layer.ffn1.forward(p, &h2);
            let f1_act = silu(&f1_pre);
            let f = layer.ffn2.forward(p, &f1_act);
            let s3: Vec<f64> = h2.iter().zip(&f).map(|(x, y)| x + y).collect();
            let (h3, ln3) = layer.ln3.forward(p, &s3);

            let delta = layer.refine.forward(p, &h3);
            for (r, dv) in refp.iter_mut().zip(&delta) {
                *r += c_out * dv;
            }
            caches.push(LayerCache {
                h_in: std::mem::take(&mut h),
                attn,
                ln1,
                h0,
                xattn,
                lnx,
                taps,
                cross_in,
                c1_pre,
                c1_act,
                ln2,
                h2,
                f1_pre,
                f1_act,
                ln3,
                h3: h3.clone(),
            });
            h = h3;
        }
        let logits = self.class_head.forward(p, &h);
        (
            DenoiseOutput { x0: refp, logits },
            ForwardCache {
                l,
                c_out,
                te0,
                th_pre,
                th,
                inp,
                layers: caches,
                h_out: h,
            },
        )
    }

    /// Backward from output gradients. Parameter gradients accumulate into
    /// `g`; latent gradients into `dlat` (`feats.n_slots() x d`) and token
    /// gradients into `dtok`.
    pub fn backward<F: Features>(
        &self,
        p: &[f64],
        g: &mut [f64],
        cache: &ForwardCache,
        feats: &F,
        dx0: &[f64],
        dlogits: &[f64],
        dlat: &mut [f64],
        dtok: &mut [f64],
    ) {
        let cfg = &self.cfg;
        let (d, q, np) = (cfg.d_model, cfg.query_len(), cfg.n_points);
        let dl = feats.shape().2;
        let l = cache.l;
        let mut dh = self.class_head.backward(p, g, &cache.h_out, dlogits, true);
        let mut dref = dx0.to_vec();
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            let ddelta: Vec<f64> = dref.iter().map(|v| cache.c_out * v).collect();
            let dh3_extra = layer.refine.backward(p, g, &lc.h3, &ddelta, true);
            for (a, b) in dh.iter_mut().zip(dh3_extra) {
                *a += b;
            }
            // The reference input to this layer receives dref directly.
            let ds3 = layer.ln3.backward(p, g, &lc.ln3, &dh);
            let df1 = layer.ffn2.backward(p, g, &lc.f1_act, &ds3, true);
            let df1_pre = silu_backward(&lc.f1_pre, &df1);
            let mut dh2 = layer.ffn1.backward(p, g, &lc.h2, &df1_pre, true);
            for (a, b) in dh2.iter_mut().zip(&ds3) {
                *a += b;
            }

            let ds2 = layer.ln2.backward(p, g, &lc.ln2, &dh2);
            let dc1 = layer.cross2.backward(p, g, &lc.c1_act, &ds2, true);
            let dc1_pre = silu_backward(&lc.c1_pre, &dc1);
            let dcross = layer.cross1.backward(p, g, &lc.cross_in, &dc1_pre, true);
            let width = d + np * dl + q;
            let mut dh1 = ds2;
            for i in 0..l {
                let row = &dcross[i * width..(i + 1) * width];
                for j in 0..d {
                    dh1[i * d + j] += row[j];
                }
                for k in 0..np {
                    let (gx, gy) = tap_backward(feats, &lc.taps[i * np + k], &row[d + k * dl..d + (k + 1) * dl], dlat);
                    dref[i * q + 2 * k] += gx;
                    dref[i * q + 2 * k + 1] += gy;
                }
                for j in 0..q {
                    dref[i * q + j] += row[d + np * dl + j];
                }
            }

            let dsx = layer.lnx.backward(p, g, &lc.lnx, &dh1);
            let (dxa, dxt) = layer.xattn.backward(p, g, &lc.h0, feats.tokens(), &lc.xattn, &dsx);
            for (a, b) in dtok.iter_mut().zip(dxt) {
                *a += b;
            }
            let dh0: Vec<f64> = dsx.iter().zip(&dxa).map(|(a, b)| a + b).collect();
            let ds1 = layer.ln1.backward(p, g, &lc.ln1, &dh0);
            let da = layer.attn.backward_self(p, g, &lc.h_in, &lc.attn, &ds1);
            dh = ds1.iter().zip(&da).map(|(a, b)| a + b).collect();
        }
        // dh is the gradient of the input embedding plus time embedding;
        // the initial references depend on x_t only.
        let mut dte = vec![0.0; d];
        for row in dh.chunks_exact(d) {
            for (a, b) in dte.iter_mut().zip(row) {
                *a += b;
            }
        }
        self.input.backward(p, g, &cache.inp, &dh, false);
        let dth = self.time2.backward(p, g, &cache.th, &dte, true);
        let dth_pre = silu_backward(&cache.th_pre, &dth);
        self.time1.backward(p, g, &cache.te0, &dth_pre, false);
    }
}

/// Trained or freshly initialized denoiser with its noise schedule.
pub struct Model {
    pub net: Net,
    pub params: Vec<f64>,
    pub schedule: NoiseSchedule,
    encode_calls: AtomicUsize,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model::from_parts(self.net.clone(), self.params.clone(), self.schedule.clone())
    }
}

impl Model {
    pub fn new(cfg: &NetConfig, schedule: NoiseSchedule, seed: u64) -> Result<Self> {
        let net = Net::new(cfg)?;
        let params = net.init_params(seed);
        Ok(Model::from_parts(net, params, schedule))
    }

    pub fn from_parts(net: Net, params: Vec<f64>, schedule: NoiseSchedule) -> Self {
        Model {
            net,
            params,
            schedule,
            encode_calls: AtomicUsize::new(0),
        }
    }

    pub fn cfg(&self) -> &NetConfig {
        &self.net.cfg
    }

    pub fn encode(&self, obs: &ObservationGrid) -> Result<LatentGrid> {
        self.encode_calls.fetch_add(1, Ordering::Relaxed);
        let cfg = self.cfg();
        if obs.h != cfg.grid_h || obs.w != cfg.grid_w {
            return Err(Error::ShapeMismatch(format!(
                "observation {}x{} but model expects {}x{}",
                obs.h, obs.w, cfg.grid_h, cfg.grid_w
            )));
        }
        let lat = self.net.encoder.encode(&self.params, &obs_to_cells(obs), obs.h, obs.w);
        if !lat.data.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericOverflow("encoder"));
        }
        Ok(lat)
    }

    pub fn encode_calls(&self) -> usize {
        self.encode_calls.load(Ordering::Relaxed)
    }

    /// Parameter checksum (SHA-256 of little-endian values).
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in &self.params {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// `n` samples for one scene from a single encoder pass.
    pub fn sample_scene(
        &self,
        obs: &ObservationGrid,
        cfg: &SamplerConfig,
        seed: u64,
    ) -> Result<Vec<VectorMap>> {
        let lat = self.encode(obs)?;
        (0..cfg.n)
            .map(|i| crate::diffusion::sample_map(self, &lat, cfg, &self.schedule, derive_seed(seed, i as u64)))
            .collect()
    }
}

impl Denoiser for Model {
    type Condition = LatentGrid;

    fn n_points(&self) -> usize {
        self.cfg().n_points
    }

    fn denoise(&self, x_t: &[f64], l: usize, t: usize, cond: &LatentGrid) -> Result<DenoiseOutput> {
        if x_t.len() != l * self.cfg().query_len() {
            return Err(Error::ShapeMismatch("query state length".into()));
        }
        if t > self.schedule.steps() {
            return Err(Error::InvalidArgument(format!("timestep {t} beyond schedule")));
        }
        let mut feats = FullFeatures(cond);
        let (out, _) = self
            .net
            .forward(&self.params, x_t, l, t, self.schedule.alpha_bar(t), &mut feats);
        if !out.x0.iter().chain(&out.logits).all(|v| v.is_finite()) {
            return Err(Error::NumericOverflow("denoiser"));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
